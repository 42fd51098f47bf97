/** Canvas mask editor: pencil/eraser brushes over an offscreen bitmap at
 * native image resolution (zoom is display-only), proposal previews merged
 * via OR / SUBTRACT / REPLACE, and a saliency overlay with an alpha slider.
 */

import { ApiClient } from "../api.js";
import { clear, el, toast } from "../dom.js";
import { MaskDocument } from "../maskdoc.js";
import { encodeMaskToPngBase64, decodePngBase64ToMask } from "../pngcodec.js";
import { Bitmap } from "../raster.js";
import { ApiError, BrushStroke, Tool, ViewState } from "../types.js";

export class AnnotateView {
  readonly root: HTMLElement;
  private stage: HTMLElement;
  private statusLine: HTMLElement;
  private doc: MaskDocument | null = null;
  private preview: Bitmap | null = null;
  private imageId: string | null = null;
  private width = 0;
  private height = 0;
  private tool: Tool = "pencil";
  private radius = 2;
  private activeStroke: BrushStroke | null = null;
  private maskCanvas: HTMLCanvasElement | null = null;
  private previewCanvas: HTMLCanvasElement | null = null;
  private saliencyImg: HTMLImageElement | null = null;

  constructor(private api: ApiClient, private state: ViewState) {
    this.stage = el("div", { class: "stage" });
    this.statusLine = el("div", { class: "status-line" }, "no image loaded");
    this.root = el("section", { class: "annotate-page" },
      this.toolbar(), this.stage, this.proposalForm(), this.statusLine);
  }

  private toolbar(): HTMLElement {
    const pencil = el("button", { class: "tool active", id: "tool-pencil" }, "pencil");
    const eraser = el("button", { class: "tool", id: "tool-eraser" }, "eraser");
    pencil.addEventListener("click", () => {
      this.tool = "pencil";
      pencil.classList.add("active");
      eraser.classList.remove("active");
    });
    eraser.addEventListener("click", () => {
      this.tool = "eraser";
      eraser.classList.add("active");
      pencil.classList.remove("active");
    });

    const radius = el("input", {
      type: "range", min: "1", max: "16", value: String(this.radius), id: "brush-radius",
    });
    radius.addEventListener("input", () => {
      this.radius = Number(radius.value);
    });

    const zoom = el("input", {
      type: "range", min: "1", max: "24", value: String(this.state.zoom), id: "zoom",
    });
    zoom.addEventListener("input", () => {
      this.state.zoom = Number(zoom.value);
      this.layoutStage();
    });

    const undoBtn = el("button", { id: "undo" }, "undo");
    undoBtn.addEventListener("click", () => {
      if (this.doc?.undo()) this.redraw();
    });
    const clearBtn = el("button", { id: "clear-mask" }, "clear");
    clearBtn.addEventListener("click", () => {
      this.doc?.clear();
      this.redraw();
    });
    const saveBtn = el("button", { class: "primary", id: "save-mask" }, "save mask");
    saveBtn.addEventListener("click", () => void this.save());

    const overlaySelect = el("select", { id: "overlay-mode" });
    for (const mode of ["none", "saliency", "mask", "both"]) {
      overlaySelect.append(el("option", { value: mode }, mode));
    }
    overlaySelect.value = this.state.overlay;
    overlaySelect.addEventListener("change", () => {
      this.state.overlay = overlaySelect.value as ViewState["overlay"];
      this.applyOverlayVisibility();
    });

    const alpha = el("input", {
      type: "range", min: "0", max: "100", value: "50", id: "saliency-alpha",
    });
    alpha.addEventListener("change", () => void this.reloadSaliency(Number(alpha.value) / 100));

    return el("div", { class: "toolbar" },
      pencil, eraser,
      el("label", {}, " radius "), radius,
      el("label", {}, " zoom "), zoom,
      undoBtn, clearBtn, saveBtn,
      el("label", {}, " overlay "), overlaySelect,
      el("label", {}, " saliency α "), alpha,
    );
  }

  private proposalForm(): HTMLElement {
    const method = el("select", { id: "propose-method" },
      el("option", { value: "range" }, "range filter"),
      el("option", { value: "border-flood" }, "border flood"),
    );
    const lo = el("input", { type: "number", step: "0.05", value: "0.0", id: "range-lo" });
    const hi = el("input", { type: "number", step: "0.05", value: "0.5", id: "range-hi" });
    const mode = el("select", { id: "range-mode" },
      el("option", { value: "luminance" }, "luminance"),
      el("option", { value: "any_channel" }, "any channel"),
      el("option", { value: "all_channels" }, "all channels"),
    );
    const tolerance = el("input", { type: "number", step: "0.05", value: "0.1", id: "flood-tolerance" });
    const inlineError = el("span", { class: "inline-error", id: "propose-error" });

    const previewBtn = el("button", { id: "propose-preview" }, "preview");
    previewBtn.addEventListener("click", async () => {
      if (!this.imageId) return;
      inlineError.textContent = "";
      const chosen = method.value;
      const params = chosen === "range"
        ? { lo: Number(lo.value), hi: Number(hi.value), channel_mode: mode.value }
        : { tolerance: Number(tolerance.value) };
      try {
        const proposal = await this.api.proposeMask(this.imageId, chosen, params);
        this.preview = await decodePngBase64ToMask(
          proposal.mask_png_base64, this.width, this.height);
        this.redraw();
      } catch (err) {
        if (err instanceof ApiError) inlineError.textContent = `[${err.code}] ${err.message}`;
        else inlineError.textContent = String(err);
      }
    });

    const acceptOr = el("button", { id: "accept-or" }, "accept (OR)");
    const acceptSub = el("button", { id: "accept-subtract" }, "subtract");
    const acceptReplace = el("button", { id: "accept-replace" }, "replace");
    const discard = el("button", { id: "discard-preview" }, "discard");
    acceptOr.addEventListener("click", () => this.acceptPreview("or"));
    acceptSub.addEventListener("click", () => this.acceptPreview("subtract"));
    acceptReplace.addEventListener("click", () => this.acceptPreview("replace"));
    discard.addEventListener("click", () => {
      this.preview = null;
      this.redraw();
    });

    return el("div", { class: "proposal-form" },
      el("label", {}, "propose: "), method,
      el("label", {}, " lo "), lo, el("label", {}, " hi "), hi, mode,
      el("label", {}, " τ "), tolerance,
      previewBtn, acceptOr, acceptSub, acceptReplace, discard, inlineError,
    );
  }

  private acceptPreview(mode: "or" | "subtract" | "replace"): void {
    if (!this.doc || !this.preview) return;
    this.doc.merge(this.preview, mode);
    this.preview = null;
    this.redraw();
  }

  async open(imageId: string): Promise<void> {
    this.imageId = imageId;
    this.state.selectedImageId = imageId;
    try {
      const maskDto = await this.api.getMask(imageId);
      this.width = maskDto.width;
      this.height = maskDto.height;
      const initial = maskDto.present && maskDto.mask_png_base64
        ? await decodePngBase64ToMask(maskDto.mask_png_base64, this.width, this.height)
        : null;
      this.doc = new MaskDocument(imageId, this.width, this.height, initial);
    } catch (err) {
      if (err instanceof ApiError) toast(`[${err.code}] ${err.message}`);
      return;
    }
    this.buildStage();
    this.redraw();
  }

  private buildStage(): void {
    clear(this.stage);
    if (!this.imageId) return;
    const base = el("img", { src: this.api.imageUrl(this.imageId), class: "layer" });
    this.saliencyImg = el("img", { class: "layer saliency-layer" });
    this.maskCanvas = el("canvas", { class: "layer mask-layer" });
    this.previewCanvas = el("canvas", { class: "layer preview-layer" });
    for (const canvas of [this.maskCanvas, this.previewCanvas]) {
      canvas.width = this.width;
      canvas.height = this.height;
    }
    const wrap = el("div", { class: "layer-stack" },
      base, this.saliencyImg, this.maskCanvas, this.previewCanvas);
    this.stage.append(wrap);
    this.layoutStage();
    this.applyOverlayVisibility();
    void this.reloadSaliency(0.5);

    this.previewCanvas.addEventListener("pointerdown", (ev) => this.strokeStart(ev));
    this.previewCanvas.addEventListener("pointermove", (ev) => this.strokeMove(ev));
    this.previewCanvas.addEventListener("pointerup", (ev) => this.strokeEnd(ev));
    this.previewCanvas.addEventListener("pointerleave", (ev) => this.strokeEnd(ev));
  }

  private layoutStage(): void {
    const stack = this.stage.querySelector<HTMLElement>(".layer-stack");
    if (!stack) return;
    stack.style.width = `${this.width * this.state.zoom}px`;
    stack.style.height = `${this.height * this.state.zoom}px`;
  }

  private applyOverlayVisibility(): void {
    if (this.saliencyImg) {
      this.saliencyImg.style.display =
        this.state.overlay === "saliency" || this.state.overlay === "both" ? "" : "none";
    }
    if (this.maskCanvas) {
      this.maskCanvas.style.display =
        this.state.overlay === "none" || this.state.overlay === "saliency" ? "none" : "";
    }
  }

  private async reloadSaliency(alpha: number): Promise<void> {
    if (this.saliencyImg && this.imageId) {
      this.saliencyImg.src = this.api.saliencyOverlayUrl(this.imageId, alpha);
    }
  }

  private eventToImage(ev: PointerEvent): { x: number; y: number } {
    const rect = (ev.target as HTMLElement).getBoundingClientRect();
    const x = ((ev.clientX - rect.left) / rect.width) * this.width;
    const y = ((ev.clientY - rect.top) / rect.height) * this.height;
    return {
      x: Math.max(0, Math.min(this.width - 1, x)),
      y: Math.max(0, Math.min(this.height - 1, y)),
    };
  }

  private strokeStart(ev: PointerEvent): void {
    if (!this.doc) return;
    (ev.target as HTMLElement).setPointerCapture?.(ev.pointerId);
    this.activeStroke = { tool: this.tool, radius: this.radius, points: [this.eventToImage(ev)] };
    this.redraw();
  }

  private strokeMove(ev: PointerEvent): void {
    if (!this.activeStroke) return;
    this.activeStroke.points.push(this.eventToImage(ev));
    this.redraw();
  }

  private strokeEnd(_ev: PointerEvent): void {
    if (!this.doc || !this.activeStroke) return;
    this.doc.stroke(this.activeStroke);
    this.activeStroke = null;
    this.redraw();
  }

  private saving = false;
  private savePending = false;

  /** At most one in-flight save per image; saves issued while one is in
   * flight coalesce into a single follow-up carrying the latest bitmap. */
  private async save(): Promise<void> {
    if (!this.doc || !this.imageId) return;
    if (this.saving) {
      this.savePending = true;
      return;
    }
    this.saving = true;
    try {
      const { revision } = await this.api.putMask(
        this.imageId, encodeMaskToPngBase64(this.doc.bitmap));
      this.doc.markSaved();
      this.statusLine.textContent = `${this.imageId}: saved revision ${revision}`;
    } catch (err) {
      // save failure keeps local state; just flag the unsaved changes
      if (err instanceof ApiError) toast(`save failed [${err.code}] ${err.message}`);
      else toast(`save failed: ${err}`);
      this.statusLine.textContent = `${this.imageId}: UNSAVED CHANGES (save failed)`;
    } finally {
      this.saving = false;
      if (this.savePending) {
        this.savePending = false;
        void this.save();
      }
    }
  }

  private paintBitmap(canvas: HTMLCanvasElement | null, mask: Bitmap | null,
                      rgba: [number, number, number, number]): void {
    if (!canvas) return;
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (!mask) return;
    const image = ctx.createImageData(canvas.width, canvas.height);
    for (let i = 0; i < mask.bits.length; i++) {
      if (mask.bits[i]) {
        image.data[i * 4] = rgba[0];
        image.data[i * 4 + 1] = rgba[1];
        image.data[i * 4 + 2] = rgba[2];
        image.data[i * 4 + 3] = rgba[3];
      }
    }
    ctx.putImageData(image, 0, 0);
  }

  private redraw(): void {
    if (!this.doc) return;
    this.paintBitmap(this.maskCanvas, this.doc.bitmap, [220, 38, 38, 160]);
    this.paintBitmap(this.previewCanvas, this.preview, [16, 185, 129, 160]);
    if (this.imageId) {
      this.statusLine.textContent =
        `${this.imageId}: ${this.doc.dirty ? "unsaved changes" : "saved"}` +
        ` | undo depth ${this.doc.undoDepth}` +
        (this.preview ? " | proposal preview active" : "");
    }
  }
}
