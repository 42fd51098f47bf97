/** Task center: training job form with client-side validation, a status
 * table polled once per second (terminal jobs stop being re-fetched), cancel
 * buttons, and the checkpoint list with an activate action.
 */

import { ApiClient } from "../api.js";
import { clear, el, toast } from "../dom.js";
import { ApiError, TaskDto, TERMINAL_STATUSES } from "../types.js";
import { trainingPayload, TrainingFormValues, validateTrainingForm } from "../validate.js";

export const POLL_INTERVAL_MS = 1000;

export class TasksView {
  readonly root: HTMLElement;
  private table: HTMLElement;
  private checkpointList: HTMLElement;
  private fieldErrors = new Map<string, HTMLElement>();
  private timer: ReturnType<typeof setInterval> | null = null;
  private tasks: TaskDto[] = [];

  constructor(private api: ApiClient, private onActivated: () => void) {
    this.table = el("div", { class: "task-table" });
    this.checkpointList = el("div", { class: "checkpoint-list" });
    this.root = el("section", { class: "tasks-page" },
      el("h3", {}, "submit paired training"),
      this.form(),
      el("h3", {}, "tasks"),
      this.table,
      el("h3", {}, "checkpoints"),
      this.checkpointList,
    );
  }

  private field(name: string, input: HTMLElement): HTMLElement {
    const error = el("span", { class: "inline-error", id: `err-${name}` });
    this.fieldErrors.set(name, error);
    return el("div", { class: "form-field" },
      el("label", {}, `${name} `), input, error);
  }

  private form(): HTMLElement {
    const base = el("input", { type: "text", id: "f-base", value: "" });
    const epochs = el("input", { type: "number", id: "f-epochs", value: "2" });
    const batch = el("input", { type: "number", id: "f-batch", value: "8" });
    const lr = el("input", { type: "number", id: "f-lr", step: "0.01", value: "0.1" });
    const lambda = el("input", { type: "number", id: "f-lambda", step: "0.1", value: "1.0" });
    const seed = el("input", { type: "number", id: "f-seed", value: "7" });
    const includeUnannotated = el("input", { type: "checkbox", id: "f-include" });
    includeUnannotated.checked = true;

    const submit = el("button", { class: "primary", id: "submit-train" }, "submit training job");
    submit.addEventListener("click", async () => {
      const values: TrainingFormValues = {
        base_checkpoint_id: base.value.trim(),
        epochs: Number(epochs.value),
        batch_size: Number(batch.value),
        learning_rate: Number(lr.value),
        lambda: Number(lambda.value),
        seed: Number(seed.value),
        include_unannotated: includeUnannotated.checked,
      };
      const errors = validateTrainingForm(values);
      for (const [name, node] of this.fieldErrors) {
        node.textContent = errors.get(name) ?? "";
      }
      if (errors.size > 0) return; // invalid: no request is sent
      try {
        const { job_id } = await this.api.submitTask("train", trainingPayload(values));
        toast(`training job ${job_id} queued`, "info");
        void this.refresh();
      } catch (err) {
        if (err instanceof ApiError) {
          // server rejection lands next to the closest field when it names one
          const target = [...this.fieldErrors.keys()].find((k) => err.message.includes(k));
          const node = target ? this.fieldErrors.get(target) : undefined;
          if (node) node.textContent = `[${err.code}] ${err.message}`;
          else toast(`[${err.code}] ${err.message}`);
        }
      }
    });

    return el("div", { class: "train-form" },
      this.field("base_checkpoint_id", base),
      this.field("epochs", epochs),
      this.field("batch_size", batch),
      this.field("learning_rate", lr),
      this.field("lambda", lambda),
      this.field("seed", seed),
      el("div", { class: "form-field" },
        el("label", {}, "include unannotated "), includeUnannotated),
      submit,
    );
  }

  startPolling(): void {
    if (this.timer) return;
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), POLL_INTERVAL_MS);
  }

  stopPolling(): void {
    if (this.timer) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** One repaint from fresh API data; never invents state. */
  async refresh(): Promise<void> {
    try {
      const [listing, checkpoints] = await Promise.all([
        this.api.listTasks(),
        this.api.listCheckpoints(),
      ]);
      this.tasks = listing.tasks;
      this.renderTasks();
      this.renderCheckpoints(checkpoints.checkpoints, checkpoints.active_checkpoint_id);
      if (this.tasks.every((t) => TERMINAL_STATUSES.has(t.status))) {
        this.stopPolling(); // nothing live left to watch
      }
    } catch (err) {
      if (err instanceof ApiError) toast(`[${err.code}] ${err.message}`);
    }
  }

  private renderTasks(): void {
    clear(this.table);
    if (this.tasks.length === 0) {
      this.table.append(el("div", { class: "empty-state" }, "no tasks yet"));
      return;
    }
    for (const task of this.tasks) {
      const bar = el("div", { class: "progress" });
      const fill = el("div", { class: "progress-fill" });
      fill.style.width = `${Math.round(task.progress * 100)}%`;
      bar.append(fill);
      const row = el("div", { class: `task-row task-${task.status}`, "data-job-id": task.job_id },
        el("span", { class: "task-id" }, task.job_id),
        el("span", { class: "task-kind" }, task.kind),
        el("span", { class: "task-status" }, task.status),
        bar,
        el("span", { class: "task-message" }, task.result_ref ?? task.message),
      );
      if (!TERMINAL_STATUSES.has(task.status)) {
        const cancelBtn = el("button", { class: "cancel" }, "cancel");
        cancelBtn.addEventListener("click", async () => {
          try {
            await this.api.cancelTask(task.job_id);
            void this.refresh();
          } catch (err) {
            if (err instanceof ApiError) toast(`[${err.code}] ${err.message}`);
          }
        });
        row.append(cancelBtn);
      }
      this.table.append(row);
    }
  }

  private renderCheckpoints(checkpoints: Array<{ checkpoint_id: string; active: boolean }>,
                            activeId: string): void {
    clear(this.checkpointList);
    for (const ckpt of checkpoints) {
      const row = el("div", { class: "checkpoint-row" },
        el("span", {}, ckpt.checkpoint_id + (ckpt.checkpoint_id === activeId ? " (active)" : "")));
      if (ckpt.checkpoint_id !== activeId) {
        const activate = el("button", {}, "activate");
        activate.addEventListener("click", async () => {
          try {
            await this.api.activateCheckpoint(ckpt.checkpoint_id);
            this.onActivated();
            void this.refresh();
          } catch (err) {
            if (err instanceof ApiError) toast(`[${err.code}] ${err.message}`);
          }
        });
        row.append(activate);
      }
      this.checkpointList.append(row);
    }
  }
}
