// @vitest-environment happy-dom
// @vitest-environment-options {"settings": {"fetch": {"disableSameOriginPolicy": true}}}
/**
 * End-to-end annotation loop against the real backend:
 * fixture dataset -> predict -> filter misclassified -> influence panel ->
 * navigate to the top harmful train image -> draw a stroke -> save ->
 * server mask matches the client rasterization bit-exactly -> 2-epoch
 * training job -> done status and a new checkpoint.
 *
 * Runs headless: the UI views execute under happy-dom with real HTTP; the
 * canvas blit (unavailable outside a real browser) is replaced by the same
 * MaskDocument/raster modules the canvas view drives, with PNG encoding via
 * pngjs instead of canvas.toDataURL.
 */

import { spawn, execFileSync, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import net from "node:net";
import os from "node:os";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { MaskDocument } from "../src/maskdoc.js";
import { bitmapsEqual } from "../src/raster.js";
import { ApiError, TERMINAL_STATUSES, ViewState } from "../src/types.js";
import { BrowserView } from "../src/views/browser.js";
import { decodePngBase64ToMaskNode, encodeMaskToPngBase64Node } from "./pngcodec-node.js";

const nodeFetch = globalThis.fetch.bind(globalThis);

let serverProc: ChildProcess | null = null;
let workDir = "";
let baseUrl = "";
let api: ApiClient;

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr && typeof addr === "object") {
        const port = addr.port;
        srv.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

async function waitForServer(url: string, timeoutMs = 60000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastErr: unknown = null;
  while (Date.now() < deadline) {
    try {
      const resp = await nodeFetch(url + "/api/meta");
      if (resp.ok) return;
    } catch (err) {
      lastErr = err;
    }
    await new Promise((r) => setTimeout(r, 300));
  }
  throw new Error(`backend never came up: ${lastErr}`);
}

async function waitForTask(jobId: string, timeoutMs = 120000): Promise<string> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const task = await api.getTask(jobId);
    if (TERMINAL_STATUSES.has(task.status)) return task.status;
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`task ${jobId} never finished`);
}

beforeAll(async () => {
  workDir = mkdtempSync(path.join(os.tmpdir(), "despur-e2e-"));
  execFileSync("python3", [
    "-c",
    `from despur.synthetic import make_fixture_workspace; make_fixture_workspace(${JSON.stringify(workDir)})`,
  ]);
  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  serverProc = spawn("python3", [
    "-m", "despur.cli", "serve",
    "--data-root", path.join(workDir, "data"),
    "--mask-root", path.join(workDir, "masks"),
    "--influence-root", path.join(workDir, "influence"),
    "--ckpt-root", path.join(workDir, "checkpoints"),
    "--cache-root", path.join(workDir, "cache"),
    "--config", path.join(workDir, "config.json"),
    "--port", String(port),
  ], { stdio: ["ignore", "pipe", "pipe"] });
  await waitForServer(baseUrl);
  api = new ApiClient(baseUrl, nodeFetch);
}, 90000);

afterAll(() => {
  serverProc?.kill();
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

describe("end-to-end annotation loop", () => {
  it("walks the whole misclassified -> influence -> annotate -> retrain path", async () => {
    document.body.innerHTML = '<div id="toasts"></div>';

    // predictions must exist before the misclassified filter works
    const predict = await api.submitTask("predict", {});
    expect(await waitForTask(predict.job_id)).toBe("done");

    // browse the test split filtered to misclassified, through the real view
    const state: ViewState = { split: "test", page: 0, filter: "misclassified",
                               selectedImageId: null, overlay: "mask", zoom: 8 };
    let navigatedTo: string | null = null;
    const view = new BrowserView(api, state, (imageId) => { navigatedTo = imageId; });
    document.body.append(view.root);
    await view.refresh();
    const cards = view.root.querySelectorAll<HTMLElement>(".card");
    expect(cards.length).toBeGreaterThan(0);
    const testImageId = cards[0].getAttribute("data-image-id")!;

    // influence is not computed yet: the sidebar offers "compute now"
    await expect(api.influence(testImageId)).rejects.toMatchObject({
      code: "INFLUENCE_NOT_COMPUTED",
    });
    cards[0].click();
    await poll(() => view.root.querySelector("#compute-influence") !== null);

    const influenceJob = await api.submitTask("influence", { scope: "all_test", k: 4 });
    expect(await waitForTask(influenceJob.job_id)).toBe("done");

    // reopen the panel: entries render harmful-first; click the top one
    cards[0].click();
    await poll(() => view.root.querySelectorAll(".influence-entry").length > 0);
    const influence = await api.influence(testImageId);
    const scores = influence.entries.map((e) => e.score);
    expect([...scores].sort((a, b) => b - a)).toEqual(scores);
    const entries = view.root.querySelectorAll<HTMLElement>(".influence-entry");
    expect(entries.length).toBe(influence.entries.length);
    entries[0].click();
    expect(navigatedTo).toBe(influence.entries[0].train_image_id);
    const targetId = navigatedTo!;

    // draw a pencil stroke on the target train image and save it
    const maskDto = await api.getMask(targetId);
    expect(maskDto.present).toBe(false);
    const doc = new MaskDocument(targetId, maskDto.width, maskDto.height);
    doc.stroke({
      tool: "pencil", radius: 2,
      points: [{ x: 1, y: 1 }, { x: maskDto.width - 2, y: maskDto.height - 2 }],
    });
    const put = await api.putMask(targetId, encodeMaskToPngBase64Node(doc.bitmap));
    expect(put.revision).toBe(1);
    doc.markSaved();

    // server-side mask must match the client rasterization bit-exactly
    const stored = await api.getMask(targetId);
    expect(stored.present).toBe(true);
    const roundTripped = decodePngBase64ToMaskNode(stored.mask_png_base64!);
    expect(bitmapsEqual(roundTripped, doc.bitmap)).toBe(true);

    // submit a 2-epoch training job and watch it finish
    const train = await api.submitTask("train", {
      base_checkpoint_id: "zero-init", epochs: 2, batch_size: 4,
      learning_rate: 0.2, lambda: 1.0, noise: "uniform01", seed: 5,
      include_unannotated: true,
    });
    expect(await waitForTask(train.job_id)).toBe("done");
    const finished = await api.getTask(train.job_id);
    expect(finished.result_ref).toBeTruthy();
    const checkpoints = await api.listCheckpoints();
    expect(checkpoints.checkpoints.map((c) => c.checkpoint_id))
      .toContain(finished.result_ref);
  }, 180000);

  it("propose endpoints feed the preview layer without persisting", async () => {
    const listing = await api.listImages("train", 0, 1, "all");
    const imageId = listing.records[0].image_id;
    const proposal = await api.proposeMask(imageId, "range",
                                           { lo: 0.0, hi: 1.0, channel_mode: "luminance" });
    const bits = decodePngBase64ToMaskNode(proposal.mask_png_base64);
    expect(bits.bits.every((b) => b === 1)).toBe(true);
    await expect(api.proposeMask(imageId, "range", { lo: 0.9, hi: 0.1 }))
      .rejects.toMatchObject({ code: "INVALID_RANGE" });
    const err = await api.proposeMask(imageId, "never-registered", {}).catch((e) => e);
    expect((err as ApiError).code).toBe("UNKNOWN_BACKEND");
  }, 60000);
});

async function poll(cond: () => boolean, timeoutMs = 10000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (cond()) return;
    await new Promise((r) => setTimeout(r, 50));
  }
  throw new Error("condition never satisfied");
}
