/** Thin typed client over the JSON API. Non-2xx responses throw ApiError. */

import {
  ApiError,
  ApiErrorBody,
  CheckpointDto,
  ImageListDto,
  InfluenceDto,
  MaskDto,
  MetaDto,
  ProposalDto,
  TaskDto,
} from "./types.js";

export class ApiClient {
  constructor(private baseUrl: string = "", private fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!resp.ok) {
      let body: ApiErrorBody = { code: "HTTP_" + resp.status, message: resp.statusText };
      try {
        body = (await resp.json()) as ApiErrorBody;
      } catch {
        // non-JSON error body: keep the synthesized code
      }
      throw new ApiError(body.code, body.message, resp.status);
    }
    return (await resp.json()) as T;
  }

  meta(): Promise<MetaDto> {
    return this.request<MetaDto>("/api/meta");
  }

  listImages(split: string, page: number, pageSize: number, filter: string): Promise<ImageListDto> {
    const params = new URLSearchParams({
      split,
      page: String(page),
      page_size: String(pageSize),
      filter,
    });
    return this.request<ImageListDto>(`/api/images?${params}`);
  }

  /** Image ids are slash-qualified relative paths and embed verbatim. */
  imageUrl(imageId: string): string {
    return `${this.baseUrl}/api/image/${imageId}`;
  }

  saliencyOverlayUrl(imageId: string, alpha: number, classIndex?: number): string {
    const params = new URLSearchParams({ overlay: "true", alpha: String(alpha) });
    if (classIndex !== undefined) params.set("class_index", String(classIndex));
    return `${this.baseUrl}/api/image/${imageId}/saliency?${params}`;
  }

  getMask(imageId: string): Promise<MaskDto> {
    return this.request<MaskDto>(`/api/image/${imageId}/mask`);
  }

  putMask(imageId: string, maskPngBase64: string): Promise<{ image_id: string; revision: number }> {
    return this.request(`/api/image/${imageId}/mask`, {
      method: "PUT",
      body: JSON.stringify({ mask_png_base64: maskPngBase64 }),
    });
  }

  proposeMask(
    imageId: string,
    method: string,
    params: Record<string, unknown>,
  ): Promise<ProposalDto> {
    return this.request<ProposalDto>(`/api/image/${imageId}/mask/propose`, {
      method: "POST",
      body: JSON.stringify({ method, params }),
    });
  }

  influence(imageId: string): Promise<InfluenceDto> {
    return this.request<InfluenceDto>(`/api/image/${imageId}/influence`);
  }

  submitTask(kind: string, payload: Record<string, unknown>): Promise<{ job_id: string }> {
    return this.request(`/api/tasks`, {
      method: "POST",
      body: JSON.stringify({ kind, payload }),
    });
  }

  listTasks(): Promise<{ tasks: TaskDto[] }> {
    return this.request(`/api/tasks`);
  }

  getTask(jobId: string): Promise<TaskDto> {
    return this.request<TaskDto>(`/api/tasks/${jobId}`);
  }

  cancelTask(jobId: string): Promise<TaskDto> {
    return this.request<TaskDto>(`/api/tasks/${jobId}/cancel`, { method: "POST" });
  }

  listCheckpoints(): Promise<{ checkpoints: CheckpointDto[]; active_checkpoint_id: string }> {
    return this.request(`/api/checkpoints`);
  }

  activateCheckpoint(id: string): Promise<{ active_checkpoint_id: string }> {
    return this.request(`/api/checkpoints/${id}/activate`, { method: "POST" });
  }
}
