/** Image browser: thumbnail grid with badges, pagination, filter controls,
 * and a sidebar showing the selected image's prediction summary, mask and
 * influence status, and the influence panel for test images.
 */

import { ApiClient } from "../api.js";
import { clear, el, toast } from "../dom.js";
import { ApiError, ImageRecordDto, ViewState } from "../types.js";

const PAGE_SIZE = 24;

export class BrowserView {
  readonly root: HTMLElement;
  private grid: HTMLElement;
  private sidebar: HTMLElement;
  private pageLabel: HTMLElement;
  private records: ImageRecordDto[] = [];
  private total = 0;

  constructor(
    private api: ApiClient,
    private state: ViewState,
    private onOpenAnnotate: (imageId: string) => void,
  ) {
    this.grid = el("div", { class: "grid" });
    this.sidebar = el("aside", { class: "sidebar" }, "Select an image.");
    this.pageLabel = el("span", { class: "page-label" });

    const splitSelect = el("select", { id: "split-select" });
    for (const split of ["train", "test"]) {
      splitSelect.append(el("option", { value: split }, split));
    }
    splitSelect.value = this.state.split;
    splitSelect.addEventListener("change", () => {
      this.state.split = splitSelect.value as ViewState["split"];
      this.state.page = 0;
      void this.refresh();
    });

    const filterSelect = el("select", { id: "filter-select" });
    for (const f of ["all", "correct", "misclassified", "annotated"]) {
      filterSelect.append(el("option", { value: f }, f));
    }
    filterSelect.value = this.state.filter;
    filterSelect.addEventListener("change", () => {
      this.state.filter = filterSelect.value as ViewState["filter"];
      this.state.page = 0;
      void this.refresh();
    });

    const prev = el("button", { id: "page-prev" }, "←");
    prev.addEventListener("click", () => {
      if (this.state.page > 0) {
        this.state.page -= 1;
        void this.refresh();
      }
    });
    const next = el("button", { id: "page-next" }, "→");
    next.addEventListener("click", () => {
      if ((this.state.page + 1) * PAGE_SIZE < this.total) {
        this.state.page += 1;
        void this.refresh();
      }
    });

    const controls = el(
      "div", { class: "controls" },
      el("label", {}, "split "), splitSelect,
      el("label", {}, " filter "), filterSelect,
      prev, this.pageLabel, next,
    );
    this.root = el(
      "section", { class: "browser-page" },
      controls,
      el("div", { class: "browser-body" }, this.grid, this.sidebar),
    );
  }

  async refresh(): Promise<void> {
    try {
      const listing = await this.api.listImages(
        this.state.split, this.state.page, PAGE_SIZE, this.state.filter);
      this.records = listing.records;
      this.total = listing.total;
    } catch (err) {
      if (err instanceof ApiError) toast(`[${err.code}] ${err.message}`);
      else toast(String(err));
      return;
    }
    const pages = Math.max(1, Math.ceil(this.total / PAGE_SIZE));
    this.pageLabel.textContent = ` page ${this.state.page + 1}/${pages} (${this.total} images) `;
    clear(this.grid);
    if (this.records.length === 0) {
      this.grid.append(el("div", { class: "empty-state" }, "No images match this filter."));
      return;
    }
    for (const rec of this.records) {
      this.grid.append(this.card(rec));
    }
  }

  private card(rec: ImageRecordDto): HTMLElement {
    const badges = el("div", { class: "badges" });
    if (rec.prediction) {
      badges.append(el(
        "span",
        { class: rec.prediction.correct ? "badge badge-correct" : "badge badge-wrong" },
        rec.prediction.correct ? "correct" : "misclassified",
      ));
      if (rec.stale) badges.append(el("span", { class: "badge badge-stale" }, "stale"));
    }
    if (rec.has_mask) badges.append(el("span", { class: "badge badge-mask" }, "annotated"));
    if (rec.has_influence) badges.append(el("span", { class: "badge badge-influence" }, "influence"));

    const img = el("img", {
      src: this.api.imageUrl(rec.image_id),
      class: "thumb",
      title: rec.image_id,
    });
    const card = el("div", { class: "card", "data-image-id": rec.image_id },
      img, badges, el("div", { class: "card-label" }, rec.class_name));
    card.addEventListener("click", () => void this.select(rec));
    return card;
  }

  private async select(rec: ImageRecordDto): Promise<void> {
    clear(this.sidebar);
    this.sidebar.append(el("h3", {}, rec.image_id));
    this.sidebar.append(el("div", {}, `true class: ${rec.class_name} (${rec.split})`));
    this.sidebar.append(el("div", {}, `${rec.width}×${rec.height}, ${rec.channels}ch`));

    if (rec.prediction) {
      const pred = rec.prediction;
      this.sidebar.append(el(
        "h4", {},
        `prediction: ${pred.predicted_class}${rec.stale ? " (stale)" : ""}`,
      ));
      const bars = el("div", { class: "prob-bars" });
      pred.probabilities.forEach((p, i) => {
        const bar = el("div", { class: "prob-bar" });
        const fill = el("div", { class: "prob-fill" });
        fill.style.width = `${Math.round(p * 100)}%`;
        bar.append(fill, el("span", { class: "prob-text" },
          `class ${i}: ${(p * 100).toFixed(1)}%`));
        bars.append(bar);
      });
      this.sidebar.append(bars);
    } else {
      this.sidebar.append(el("div", {}, "no prediction cached (run a predict task)"));
    }

    this.sidebar.append(el("div", {}, rec.has_mask ? "mask: saved" : "mask: none"));
    if (rec.split === "train") {
      const openBtn = el("button", { class: "primary", id: "open-annotate" }, "open in canvas");
      openBtn.addEventListener("click", () => this.onOpenAnnotate(rec.image_id));
      this.sidebar.append(openBtn);
    } else {
      await this.influencePanel(rec);
    }
  }

  /** Influence list for a test image, harmful-first in API order. */
  private async influencePanel(rec: ImageRecordDto): Promise<void> {
    const panel = el("div", { class: "influence-panel" }, el("h4", {}, "influence"));
    this.sidebar.append(panel);
    try {
      const influence = await this.api.influence(rec.image_id);
      const list = el("div", { class: "influence-list" });
      for (const entry of influence.entries) {
        const item = el("div", { class: "influence-entry" },
          el("img", { src: this.api.imageUrl(entry.train_image_id), class: "thumb-small" }),
          el("span", {}, `${entry.train_image_id} (${entry.score.toExponential(3)})`));
        item.addEventListener("click", () => this.onOpenAnnotate(entry.train_image_id));
        list.append(item);
      }
      panel.append(
        el("div", {}, `solver ${influence.solver}, damping ${influence.damping}`),
        list,
      );
    } catch (err) {
      if (err instanceof ApiError && err.code === "INFLUENCE_NOT_COMPUTED") {
        const computeBtn = el("button", { id: "compute-influence" }, "compute now");
        computeBtn.addEventListener("click", async () => {
          try {
            const { job_id } = await this.api.submitTask("influence", { scope: "all_test" });
            toast(`influence task ${job_id} queued`, "info");
          } catch (submitErr) {
            if (submitErr instanceof ApiError) {
              toast(`[${submitErr.code}] ${submitErr.message}`);
            }
          }
        });
        panel.append(el("div", {}, "not computed yet "), computeBtn);
      } else if (err instanceof ApiError) {
        toast(`[${err.code}] ${err.message}`);
      }
    }
  }
}
