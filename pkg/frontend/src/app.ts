/** Application shell: hash routing between the browser, canvas, and task
 * center pages, plus the meta header showing the active checkpoint.
 */

import { ApiClient } from "./api.js";
import { clear, el, toast } from "./dom.js";
import { ApiError, ViewState } from "./types.js";
import { AnnotateView } from "./views/annotate.js";
import { BrowserView } from "./views/browser.js";
import { TasksView } from "./views/tasks.js";

export class App {
  private api = new ApiClient("");
  private state: ViewState = {
    split: "train",
    page: 0,
    filter: "all",
    selectedImageId: null,
    overlay: "mask",
    zoom: 8,
  };
  private browser: BrowserView;
  private annotate: AnnotateView;
  private tasks: TasksView;
  private header: HTMLElement;
  private main: HTMLElement;

  constructor(private rootElement: HTMLElement) {
    this.browser = new BrowserView(this.api, this.state, (imageId) => {
      window.location.hash = `#/annotate/${imageId}`;
    });
    this.annotate = new AnnotateView(this.api, this.state);
    this.tasks = new TasksView(this.api, () => void this.refreshHeader());
    this.header = el("header", { class: "app-header" });
    this.main = el("main", {});
    rootElement.append(this.header, this.main,
      el("div", { id: "toasts", class: "toasts" }));
    window.addEventListener("hashchange", () => void this.route());
  }

  async start(): Promise<void> {
    await this.refreshHeader();
    await this.route();
  }

  async refreshHeader(): Promise<void> {
    clear(this.header);
    const nav = el("nav", {},
      el("a", { href: "#/browse" }, "browse"),
      el("a", { href: "#/tasks" }, "task center"),
    );
    try {
      const meta = await this.api.meta();
      this.header.append(
        el("span", { class: "brand" }, "despur"),
        nav,
        el("span", { class: "meta-line", id: "meta-line" },
          `${meta.class_names.length} classes | input ${meta.input_shape.join("×")} | ` +
          `active checkpoint: ${meta.active_checkpoint_id}`),
      );
    } catch (err) {
      this.header.append(el("span", { class: "brand" }, "despur"), nav);
      if (err instanceof ApiError) toast(`[${err.code}] ${err.message}`);
    }
  }

  private async route(): Promise<void> {
    const hash = window.location.hash || "#/browse";
    clear(this.main);
    this.tasks.stopPolling();
    if (hash.startsWith("#/annotate/")) {
      const imageId = hash.slice("#/annotate/".length);
      this.main.append(this.annotate.root);
      await this.annotate.open(imageId);
    } else if (hash.startsWith("#/tasks")) {
      this.main.append(this.tasks.root);
      this.tasks.startPolling();
    } else {
      this.main.append(this.browser.root);
      await this.browser.refresh();
    }
    await this.refreshHeader();
  }
}

const host = document.getElementById("app");
if (host) {
  const app = new App(host);
  void app.start();
}
