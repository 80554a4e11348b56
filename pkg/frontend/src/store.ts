/**
 * Workspace state store. The server is the single source of truth: every
 * field in the state is either a verbatim API response or an explicitly
 * flagged unsaved draft. Reloading the app (or calling `refresh()` on a
 * fresh store) reconstructs the same state from the API alone.
 *
 * Label saves are never optimistic: records update only from server
 * responses, after the request succeeds.
 */

import {
  ApiClient,
  ApiError,
  type Box,
  type DocumentOut,
  type FinetuneRequest,
  type JobOut,
  type LineOut,
  type ModelOut,
  type PageOut,
  type SegmentRequest,
  type UploadFilePayload,
} from "./api.js";
import { clampBox, compareBoxes } from "./geometry.js";
import { toNFC } from "./text.js";

export interface LineView {
  record: LineOut;
  /** Unsaved transcript edit; null means no pending edit. */
  draftText: string | null;
}

export interface PageView {
  page: PageOut;
  /** Lines in reading order (top-to-bottom). */
  lines: LineView[];
  /** Unsaved layout edit; null means the boxes on the server are current. */
  draftBoxes: Box[] | null;
}

export interface WorkspaceState {
  documents: DocumentOut[];
  models: ModelOut[];
  selectedDocumentId: string | null;
  pageView: PageView | null;
  selectedModel: string | null;
  activeJob: JobOut | null;
  /** Last API error message, verbatim from the server. */
  error: string | null;
}

export type Listener = (state: WorkspaceState) => void;

const SUPPORTED_EXTENSIONS = [".png", ".jpg", ".jpeg", ".pdf"];

export class WorkspaceStore {
  private state: WorkspaceState = {
    documents: [],
    models: [],
    selectedDocumentId: null,
    pageView: null,
    selectedModel: null,
    activeJob: null,
    error: null,
  };

  private listeners: Listener[] = [];

  constructor(
    readonly api: ApiClient,
    private readonly uploadLimitBytes: number = 100 * 1024 * 1024,
  ) {}

  getState(): WorkspaceState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private set(patch: Partial<WorkspaceState>): void {
    this.state = { ...this.state, ...patch };
    for (const l of this.listeners) l(this.state);
  }

  private fail(err: unknown): never {
    const message =
      err instanceof ApiError ? err.message : err instanceof Error ? err.message : String(err);
    this.set({ error: message });
    throw err;
  }

  get hasUnsavedEdits(): boolean {
    const pv = this.state.pageView;
    if (!pv) return false;
    return pv.draftBoxes !== null || pv.lines.some((l) => l.draftText !== null);
  }

  /** Re-derive the whole workspace from the API (app start or reload). */
  async refresh(): Promise<void> {
    try {
      const [documents, models] = await Promise.all([
        this.api.listDocuments(),
        this.api.listModels(),
      ]);
      this.set({ documents, models, error: null });
      if (this.state.selectedDocumentId) {
        const docId = this.state.selectedDocumentId;
        if (documents.some((d) => d.document_id === docId)) {
          const pageId = this.state.pageView?.page.id;
          if (pageId) await this.openPage(pageId);
        } else {
          this.set({ selectedDocumentId: null, pageView: null });
        }
      }
      if (this.state.activeJob) {
        await this.refreshJob(this.state.activeJob.id);
      }
    } catch (err) {
      this.fail(err);
    }
  }

  /** Client-side pre-checks mirroring the server's validation. */
  validateUpload(name: string, size: number): string | null {
    const lower = name.toLowerCase();
    if (!SUPPORTED_EXTENSIONS.some((ext) => lower.endsWith(ext))) {
      return `unsupported file type; expected one of ${SUPPORTED_EXTENSIONS.join(", ")}`;
    }
    if (size > this.uploadLimitBytes) {
      const mb = Math.floor(this.uploadLimitBytes / (1024 * 1024));
      return `file exceeds the ${mb} MB upload limit`;
    }
    return null;
  }

  async uploadDocument(file: UploadFilePayload): Promise<DocumentOut> {
    try {
      const doc = await this.api.uploadDocument(file);
      const documents = await this.api.listDocuments();
      this.set({ documents, error: null });
      return doc;
    } catch (err) {
      this.fail(err);
    }
  }

  async openDocument(documentId: string): Promise<void> {
    try {
      const doc = await this.api.getDocument(documentId);
      this.set({ selectedDocumentId: documentId, error: null });
      if (doc.page_ids.length > 0) await this.openPage(doc.page_ids[0]);
      else this.set({ pageView: null });
    } catch (err) {
      this.fail(err);
    }
  }

  async openPage(pageId: string): Promise<void> {
    try {
      const page = await this.api.getPage(pageId);
      const lines = await this.api.getPageLines(pageId);
      this.set({
        selectedDocumentId: page.document_id,
        pageView: {
          page,
          lines: toViews(lines),
          draftBoxes: null,
        },
        error: null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  async autoSegment(req: SegmentRequest = {}): Promise<void> {
    const pv = this.requirePage();
    try {
      const lines = await this.api.segmentPage(pv.page.id, req);
      this.set({
        pageView: { ...pv, lines: toViews(lines), draftBoxes: null },
        error: null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  /** Begin (or continue) a layout edit from the current server boxes. */
  currentBoxes(): Box[] {
    const pv = this.requirePage();
    return pv.draftBoxes ?? pv.lines.map((l) => ({ ...l.record.box }));
  }

  /** Stage an edited layout; boxes are clamped to the page client-side. */
  setDraftBoxes(boxes: Box[]): void {
    const pv = this.requirePage();
    const clamped = boxes.map((b) => clampBox(b, pv.page.width, pv.page.height));
    this.set({ pageView: { ...pv, draftBoxes: clamped } });
  }

  discardDraftBoxes(): void {
    const pv = this.requirePage();
    this.set({ pageView: { ...pv, draftBoxes: null } });
  }

  /** Persist the staged layout; line records come back from the server. */
  async saveLayout(): Promise<void> {
    const pv = this.requirePage();
    if (!pv.draftBoxes) return;
    try {
      const lines = await this.api.putPageLines(pv.page.id, pv.draftBoxes);
      this.set({
        pageView: { ...pv, lines: toViews(lines), draftBoxes: null },
        error: null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  async runOcr(lineId: string, model?: string): Promise<string> {
    try {
      const result = await this.api.ocrLine(lineId, model ?? this.state.selectedModel ?? undefined);
      // Re-fetch the record: displayed state must equal the server's.
      await this.reloadLine(lineId);
      return result.text;
    } catch (err) {
      this.fail(err);
    }
  }

  /** Stage a transcript edit without saving (flagged as unsaved). */
  setDraftText(lineId: string, text: string): void {
    const pv = this.requirePage();
    this.set({
      pageView: {
        ...pv,
        lines: pv.lines.map((l) =>
          l.record.id === lineId ? { ...l, draftText: text } : l,
        ),
      },
    });
  }

  /** Save a line's transcript; drafts survive API errors. */
  async saveText(lineId: string): Promise<LineOut> {
    const pv = this.requirePage();
    const view = pv.lines.find((l) => l.record.id === lineId);
    if (!view) throw new Error(`line ${lineId} not on the current page`);
    const text = view.draftText ?? view.record.ocr_text ?? "";
    try {
      const record = await this.api.correctLine(lineId, toNFC(text));
      const current = this.requirePage();
      this.set({
        pageView: {
          ...current,
          lines: current.lines.map((l) =>
            l.record.id === lineId ? { record, draftText: null } : l,
          ),
        },
        error: null,
      });
      return record;
    } catch (err) {
      this.fail(err); // draftText is left in place
    }
  }

  async reloadLine(lineId: string): Promise<LineOut> {
    const record = await this.api.getLine(lineId);
    const pv = this.state.pageView;
    if (pv) {
      this.set({
        pageView: {
          ...pv,
          lines: pv.lines.map((l) =>
            l.record.id === lineId ? { ...l, record } : l,
          ),
        },
      });
    }
    return record;
  }

  /** Id of the next line in reading order, or null at the end of the page. */
  nextLineId(currentId: string): string | null {
    const pv = this.requirePage();
    const ordered = [...pv.lines].sort((a, b) =>
      compareBoxes(a.record.box, b.record.box),
    );
    const idx = ordered.findIndex((l) => l.record.id === currentId);
    if (idx < 0 || idx + 1 >= ordered.length) return null;
    return ordered[idx + 1].record.id;
  }

  get correctedLineCount(): number {
    const pv = this.state.pageView;
    if (!pv) return 0;
    return pv.lines.filter((l) => l.record.status === "corrected").length;
  }

  selectModel(name: string | null): void {
    this.set({ selectedModel: name });
  }

  async launchFinetune(req: FinetuneRequest): Promise<JobOut> {
    try {
      const { job_id } = await this.api.launchFinetune(req);
      const job = await this.api.getJob(job_id);
      this.set({ activeJob: job, error: null });
      return job;
    } catch (err) {
      this.fail(err);
    }
  }

  async refreshJob(jobId: string): Promise<JobOut> {
    try {
      const job = await this.api.getJob(jobId);
      this.set({ activeJob: job });
      if (job.status === "done") {
        // Completion surfaces the new model in the picker.
        const models = await this.api.listModels();
        this.set({ models });
      }
      return job;
    } catch (err) {
      this.fail(err);
    }
  }

  /** Poll a job until it reaches a terminal state. */
  async waitForJob(
    jobId: string,
    { intervalMs = 500, timeoutMs = 300_000 } = {},
  ): Promise<JobOut> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const job = await this.refreshJob(jobId);
      if (job.status === "done" || job.status === "failed") return job;
      if (Date.now() >= deadline) {
        throw new Error(`job ${jobId} still ${job.status} after ${timeoutMs} ms`);
      }
      await sleep(intervalMs);
    }
  }

  private requirePage(): PageView {
    const pv = this.state.pageView;
    if (!pv) throw new Error("no page selected");
    return pv;
  }
}

function toViews(lines: LineOut[]): LineView[] {
  return [...lines]
    .sort((a, b) => compareBoxes(a.box, b.box))
    .map((record) => ({ record, draftText: null }));
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
