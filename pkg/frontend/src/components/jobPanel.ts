/**
 * Fine-tune job panel: launch button (disabled without corrected lines),
 * live status, and an SVG chart of the loss/CER curves streamed from the
 * job record.
 */

import type { CurvePointOut, JobOut } from "../api.js";
import type { WorkspaceStore } from "../store.js";

export class JobPanel {
  private polling = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly store: WorkspaceStore,
  ) {}

  render(): void {
    const state = this.store.getState();
    this.root.replaceChildren();

    const launch = document.createElement("button");
    launch.textContent = "Fine-tune on corrected lines";
    const corrected = this.store.correctedLineCount;
    if (corrected === 0) {
      launch.disabled = true;
      launch.title = "correct at least one line first";
    }
    launch.addEventListener("click", () => void this.launch());
    this.root.appendChild(launch);

    const job = state.activeJob;
    if (!job) return;

    const status = document.createElement("div");
    status.className = `job-status job-${job.status}`;
    status.textContent = this.statusText(job);
    this.root.appendChild(status);

    if (job.curve.length > 0) {
      this.root.appendChild(renderCurveChart(job.curve));
    }
    if (job.status === "running" || job.status === "queued") {
      void this.poll(job.id);
    }
  }

  private statusText(job: JobOut): string {
    switch (job.status) {
      case "done":
        return `done — new model: ${job.result_model}`;
      case "failed":
        return `failed: ${job.error ?? "unknown error"}`;
      default:
        return `${job.status} — epoch ${job.progress_epoch}/${job.progress_total}`;
    }
  }

  private async launch(): Promise<void> {
    const state = this.store.getState();
    const docId = state.selectedDocumentId;
    const base = state.selectedModel ?? state.models[0]?.name;
    if (!docId || !base) return;
    try {
      const job = await this.store.launchFinetune({
        base_model: base,
        documents: [docId],
      });
      this.render();
      void this.poll(job.id);
    } catch {
      // 409 while another job runs; the store captured the message.
      const message = this.store.getState().error;
      const note = document.createElement("div");
      note.className = "job-status job-failed";
      note.textContent =
        message === "a fine-tune job is already running"
          ? "a job is already running"
          : (message ?? "launch failed");
      this.root.appendChild(note);
    }
  }

  private async poll(jobId: string): Promise<void> {
    if (this.polling) return;
    this.polling = true;
    try {
      await this.store.waitForJob(jobId);
    } finally {
      this.polling = false;
      this.render();
    }
  }
}

/** Minimal two-series SVG line chart: train loss and validation CER. */
export function renderCurveChart(curve: CurvePointOut[]): SVGSVGElement {
  const W = 320;
  const H = 120;
  const PAD = 10;
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("viewBox", `0 0 ${W} ${H}`);
  svg.setAttribute("class", "curve-chart");
  const epochs = curve.map((p) => p.epoch);
  const maxEpoch = Math.max(...epochs, 1);
  const series: Array<[keyof CurvePointOut, string]> = [
    ["train_loss", "#c62828"],
    ["val_cer", "#1565c0"],
  ];
  for (const [key, color] of series) {
    const values = curve.map((p) => p[key] as number);
    const maxV = Math.max(...values, 1e-9);
    const points = curve
      .map((p, i) => {
        const x = PAD + ((p.epoch / maxEpoch) * (W - 2 * PAD));
        const y = H - PAD - (values[i] / maxV) * (H - 2 * PAD);
        return `${x.toFixed(1)},${y.toFixed(1)}`;
      })
      .join(" ");
    const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
    line.setAttribute("points", points);
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", color);
    line.setAttribute("stroke-width", "1.5");
    svg.appendChild(line);
  }
  return svg;
}
