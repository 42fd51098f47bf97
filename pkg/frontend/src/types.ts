/** Wire types mirroring the JSON API, plus client-side view state. */

export interface PredictionDto {
  predicted_label: number;
  predicted_class: string;
  probabilities: number[];
  correct: boolean;
  checkpoint_id: string;
}

export interface ImageRecordDto {
  image_id: string;
  split: "train" | "test";
  class_label: number;
  class_name: string;
  width: number;
  height: number;
  channels: number;
  prediction: PredictionDto | null;
  stale: boolean;
  has_mask: boolean;
  has_influence: boolean;
}

export interface ImageListDto {
  records: ImageRecordDto[];
  total: number;
  page: number;
  page_size: number;
  split: string;
  filter: string;
}

export interface MetaDto {
  class_names: string[];
  input_shape: [number, number, number];
  active_checkpoint_id: string;
  backend: { backend_name: string; parameter_count: number; capabilities: string[] };
}

export interface MaskDto {
  image_id: string;
  present: boolean;
  mask_png_base64: string | null;
  revision: number | null;
  width: number;
  height: number;
}

export interface ProposalDto {
  image_id: string;
  method: string;
  mask_png_base64: string;
  width: number;
  height: number;
}

export interface InfluenceEntryDto {
  train_image_id: string;
  score: number;
}

export interface InfluenceDto {
  test_image_id: string;
  checkpoint_id: string;
  damping: number;
  solver: string;
  k: number;
  entries: InfluenceEntryDto[];
}

export interface TaskDto {
  job_id: string;
  kind: "train" | "influence" | "predict";
  status: "queued" | "running" | "done" | "failed" | "cancelled";
  progress: number;
  message: string;
  submitted_at: number;
  started_at: number | null;
  finished_at: number | null;
  payload: Record<string, unknown>;
  result_ref: string | null;
}

export interface CheckpointDto {
  checkpoint_id: string;
  backend_name: string;
  active: boolean;
  metadata: Record<string, unknown>;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export class ApiError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

export type Tool = "pencil" | "eraser";

export interface BrushStroke {
  tool: Tool;
  radius: number;
  points: Array<{ x: number; y: number }>;
}

export type OverlayMode = "none" | "saliency" | "mask" | "both";

export interface ViewState {
  split: "train" | "test";
  page: number;
  filter: "all" | "correct" | "misclassified" | "annotated";
  selectedImageId: string | null;
  overlay: OverlayMode;
  zoom: number;
}

export const TERMINAL_STATUSES: ReadonlySet<string> = new Set(["done", "failed", "cancelled"]);
