/**
 * Rectification workbench: view the image with the generalist /
 * specialist / fused overlays, edit the fused mask with brush, eraser
 * and fill, then submit the correction (or skip) and watch the alpha
 * and DSC trends move as the model learns.
 *
 * The server is the source of truth; everything here is disposable
 * view state, so a refresh is always safe.
 */

import { ApiClient, ApiError, type StepPayload, type StepRecord } from "./api.js";
import {
  applyStroke,
  cloneMask,
  emptyMask,
  encodeMaskPng,
  decodeMaskPng,
  floodFill,
  masksEqual,
  type MaskRaster,
  type Tool,
} from "./mask.js";
import { bytesToBase64, base64ToBytes } from "./png.js";
import { TrendChart } from "./charts.js";
import { UndoStack } from "./undo.js";
import { browserZlib } from "./zlib-browser.js";

const SCALE = 4;
const OVERLAY_CYCLE = ["none", "generalist", "aux", "fused"] as const;
type OverlayChoice = (typeof OVERLAY_CYCLE)[number];

const DEFAULT_SESSION_BODY = {
  config: { k: 32, K: 5, seed: 0 },
  data: { kind: "synthetic", seed: 0, count: 40, image_size: 128 },
  generalist: { kind: "mock" },
};

interface LoadedStep {
  payload: StepPayload;
  image: HTMLImageElement;
  overlays: Record<Exclude<OverlayChoice, "none">, MaskRaster>;
}

class App {
  private api = new ApiClient("");
  private sessionId: string | null = null;
  private step: LoadedStep | null = null;
  private edit: MaskRaster = emptyMask(1, 1);
  private editBaseline: MaskRaster = emptyMask(1, 1);
  private undo = new UndoStack();
  private tool: Tool = "brush";
  private radius = 3;
  private overlay: OverlayChoice = "none";
  private busy = false;
  private strokePath: Array<[number, number]> = [];
  private alphaChart: TrendChart;
  private dscChart: TrendChart;

  private els = {
    start: document.getElementById("start-panel") as HTMLDivElement,
    work: document.getElementById("work-panel") as HTMLDivElement,
    done: document.getElementById("done-panel") as HTMLDivElement,
    sessionBody: document.getElementById("session-body") as HTMLTextAreaElement,
    startButton: document.getElementById("start-session") as HTMLButtonElement,
    banner: document.getElementById("banner") as HTMLDivElement,
    stepLabel: document.getElementById("step-label") as HTMLSpanElement,
    alphaLabel: document.getElementById("alpha-label") as HTMLSpanElement,
    image: document.getElementById("image-canvas") as HTMLCanvasElement,
    editCanvas: document.getElementById("edit-canvas") as HTMLCanvasElement,
    tools: document.querySelectorAll<HTMLButtonElement>("button[data-tool]"),
    radius: document.getElementById("brush-radius") as HTMLInputElement,
    radiusLabel: document.getElementById("radius-label") as HTMLSpanElement,
    overlayButton: document.getElementById("cycle-overlay") as HTMLButtonElement,
    undoButton: document.getElementById("undo") as HTMLButtonElement,
    resetButton: document.getElementById("reset-edit") as HTMLButtonElement,
    submit: document.getElementById("submit") as HTMLButtonElement,
    skip: document.getElementById("skip") as HTMLButtonElement,
    summary: document.getElementById("done-summary") as HTMLDivElement,
    reportLink: document.getElementById("report-link") as HTMLAnchorElement,
  };

  constructor() {
    this.alphaChart = new TrendChart(
      document.getElementById("alpha-chart") as HTMLCanvasElement,
      "alpha (line: used, dots: optimal)", "#5b9bd5", "#e8b339",
    );
    this.dscChart = new TrendChart(
      document.getElementById("dsc-chart") as HTMLCanvasElement,
      "fused DSC", "#65c97a", "#65c97a",
    );
    this.els.sessionBody.value = JSON.stringify(DEFAULT_SESSION_BODY, null, 2);
    this.bindEvents();
  }

  private bindEvents(): void {
    this.els.startButton.addEventListener("click", () => void this.startSession());
    this.els.tools.forEach((button) => {
      button.addEventListener("click", () => {
        this.tool = button.dataset.tool as Tool;
        this.els.tools.forEach((b) => b.classList.toggle("active", b === button));
      });
    });
    this.els.radius.addEventListener("input", () => {
      this.radius = Number(this.els.radius.value);
      this.els.radiusLabel.textContent = String(this.radius);
    });
    this.els.overlayButton.addEventListener("click", () => {
      const at = OVERLAY_CYCLE.indexOf(this.overlay);
      this.overlay = OVERLAY_CYCLE[(at + 1) % OVERLAY_CYCLE.length];
      this.els.overlayButton.textContent = `overlay: ${this.overlay}`;
      this.render();
    });
    this.els.undoButton.addEventListener("click", () => {
      const frame = this.undo.pop();
      if (frame) {
        this.edit = frame;
        this.render();
      }
    });
    this.els.resetButton.addEventListener("click", () => {
      this.undo.push(this.edit);
      this.edit = cloneMask(this.editBaseline);
      this.render();
    });
    this.els.submit.addEventListener("click", () => void this.submit());
    this.els.skip.addEventListener("click", () => void this.skip());

    const canvas = this.els.editCanvas;
    let drawing = false;
    const toCell = (ev: PointerEvent): [number, number] => {
      const rect = canvas.getBoundingClientRect();
      const x = ((ev.clientX - rect.left) / rect.width) * this.edit.width;
      const y = ((ev.clientY - rect.top) / rect.height) * this.edit.height;
      return [y, x];
    };
    canvas.addEventListener("pointerdown", (ev) => {
      if (!this.step || this.busy) return;
      const [y, x] = toCell(ev);
      this.undo.push(this.edit);
      if (this.tool === "fill") {
        floodFill(this.edit, Math.floor(y), Math.floor(x));
        this.render();
        return;
      }
      drawing = true;
      this.strokePath = [[y, x]];
      applyStroke(this.edit, this.strokePath, this.radius, this.tool === "brush" ? 1 : 0);
      this.render();
      canvas.setPointerCapture(ev.pointerId);
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (!drawing) return;
      const point = toCell(ev);
      const last = this.strokePath[this.strokePath.length - 1];
      this.strokePath.push(point);
      applyStroke(
        this.edit,
        [last, point],
        this.radius,
        this.tool === "brush" ? 1 : 0,
      );
      this.render();
    });
    const endStroke = () => {
      drawing = false;
      this.strokePath = [];
    };
    canvas.addEventListener("pointerup", endStroke);
    canvas.addEventListener("pointercancel", endStroke);
  }

  private setBanner(text: string | null, tone: "error" | "info" = "error"): void {
    this.els.banner.textContent = text ?? "";
    this.els.banner.className = text ? `banner ${tone}` : "banner hidden";
  }

  private async startSession(): Promise<void> {
    let body: unknown;
    try {
      body = JSON.parse(this.els.sessionBody.value);
    } catch (exc) {
      this.setBanner(`session config is not valid JSON: ${exc}`);
      return;
    }
    try {
      this.sessionId = await this.api.createSession(body);
    } catch (exc) {
      this.setBanner(exc instanceof ApiError ? exc.message : String(exc));
      return;
    }
    this.setBanner(null);
    this.alphaChart.reset();
    this.dscChart.reset();
    this.els.start.classList.add("hidden");
    this.els.work.classList.remove("hidden");
    await this.fetchNext();
  }

  private hasUnsubmittedEdit(): boolean {
    return this.step !== null && !masksEqual(this.edit, this.editBaseline);
  }

  private async fetchNext(): Promise<void> {
    if (!this.sessionId || this.busy) return;
    if (this.hasUnsubmittedEdit() && !window.confirm("Discard the current edit?")) {
      return;
    }
    this.busy = true;
    try {
      const result = await this.api.next(this.sessionId);
      if (result.kind === "done") {
        await this.showDone();
        return;
      }
      if (result.kind === "pending") {
        this.setBanner("a step is already pending on the server", "info");
        return;
      }
      await this.loadStep(result.payload);
    } catch (exc) {
      this.setBanner(exc instanceof ApiError ? exc.message : String(exc));
    } finally {
      this.busy = false;
    }
  }

  private async loadStep(payload: StepPayload): Promise<void> {
    const [fused, generalist, aux] = await Promise.all([
      decodeMaskPng(base64ToBytes(payload.fused_mask_b64), browserZlib),
      decodeMaskPng(base64ToBytes(payload.generalist_mask_b64), browserZlib),
      decodeMaskPng(base64ToBytes(payload.aux_mask_b64), browserZlib),
    ]);
    const image = new Image();
    await new Promise<void>((resolve, reject) => {
      image.onload = () => resolve();
      image.onerror = () => reject(new Error("image decode failed"));
      image.src = `data:image/png;base64,${payload.image_b64}`;
    });
    this.step = { payload, image, overlays: { fused, generalist, aux } };
    // expert corrections start from the fused output
    this.edit = cloneMask(fused);
    this.editBaseline = cloneMask(fused);
    this.undo.clear();
    this.els.stepLabel.textContent =
      `step ${payload.step} / sample ${payload.sample_id} / ${payload.prompt.kind} prompt`;
    this.els.alphaLabel.textContent = `alpha ${payload.alpha_used.toFixed(3)}`;
    this.sizeCanvases(fused.width, fused.height);
    this.render();
  }

  private sizeCanvases(width: number, height: number): void {
    for (const canvas of [this.els.image, this.els.editCanvas]) {
      canvas.width = width * SCALE;
      canvas.height = height * SCALE;
    }
  }

  private render(): void {
    if (!this.step) return;
    const { image } = this.step;
    const ictx = this.els.image.getContext("2d")!;
    ictx.imageSmoothingEnabled = false;
    ictx.drawImage(image, 0, 0, this.els.image.width, this.els.image.height);

    const ectx = this.els.editCanvas.getContext("2d")!;
    ectx.clearRect(0, 0, this.els.editCanvas.width, this.els.editCanvas.height);
    if (this.overlay !== "none") {
      this.paintMask(ectx, this.step.overlays[this.overlay], "rgba(91,155,213,0.45)");
    }
    this.paintMask(ectx, this.edit, "rgba(232,76,61,0.45)");
  }

  private paintMask(ctx: CanvasRenderingContext2D, mask: MaskRaster, fill: string): void {
    ctx.fillStyle = fill;
    for (let y = 0; y < mask.height; y++) {
      let runStart = -1;
      for (let x = 0; x <= mask.width; x++) {
        const on = x < mask.width && mask.data[y * mask.width + x] === 1;
        if (on && runStart < 0) runStart = x;
        if (!on && runStart >= 0) {
          ctx.fillRect(runStart * SCALE, y * SCALE, (x - runStart) * SCALE, SCALE);
          runStart = -1;
        }
      }
    }
  }

  private appendTrends(record: StepRecord): void {
    this.alphaChart.add({
      step: record.step,
      value: record.alpha_used,
      marker: record.alpha_star ?? undefined,
    });
    if (record.dsc_fused !== null) {
      this.dscChart.add({ step: record.step, value: record.dsc_fused });
    }
  }

  private async submit(): Promise<void> {
    if (!this.sessionId || !this.step || this.busy) return;
    this.busy = true;
    this.els.submit.disabled = true;
    try {
      const png = await encodeMaskPng(this.edit, browserZlib);
      const result = await this.api.rectify(this.sessionId, bytesToBase64(png));
      this.appendTrends(result.record);
      this.setBanner(null);
      this.step = null;
      this.busy = false;
      await this.fetchNext();
    } catch (exc) {
      // the edit stays in place so the expert can retry
      this.setBanner(exc instanceof ApiError ? exc.message : String(exc));
    } finally {
      this.busy = false;
      this.els.submit.disabled = false;
    }
  }

  private async skip(): Promise<void> {
    if (!this.sessionId || !this.step || this.busy) return;
    this.busy = true;
    try {
      const record = await this.api.skip(this.sessionId);
      this.appendTrends(record);
      this.setBanner(null);
      this.step = null;
      this.busy = false;
      await this.fetchNext();
    } catch (exc) {
      this.setBanner(exc instanceof ApiError ? exc.message : String(exc));
    } finally {
      this.busy = false;
    }
  }

  private async showDone(): Promise<void> {
    this.els.work.classList.add("hidden");
    this.els.done.classList.remove("hidden");
    if (!this.sessionId) return;
    this.els.reportLink.href = this.api.reportUrl(this.sessionId);
    try {
      const state = await this.api.state(this.sessionId);
      this.els.summary.textContent =
        `${state.step_count} steps, batch ${state.batch_len}, ` +
        `alpha ${state.alpha_current.toFixed(3)}, params ${state.param_checksum}`;
    } catch (exc) {
      this.els.summary.textContent = String(exc);
    }
  }
}

new App();
