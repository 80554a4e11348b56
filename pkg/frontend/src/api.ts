/**
 * Typed client for the kalchas OCR service HTTP API.
 *
 * Every piece of UI state derives from these responses; the client performs
 * no OCR, segmentation, or training computation of its own.
 */

export interface Box {
  x: number;
  y: number;
  width: number;
  height: number;
}

export interface DocumentOut {
  document_id: string;
  filename: string;
  media_type: string;
  n_pages: number;
  page_ids: string[];
  created_at: string;
}

export interface PageOut {
  id: string;
  document_id: string;
  index: number;
  width: number;
  height: number;
  line_ids: string[];
}

export type LineStatus = "unprocessed" | "ocr_done" | "corrected";

export interface LineOut {
  id: string;
  page_id: string;
  box: Box;
  status: LineStatus;
  ocr_text: string | null;
  ocr_confidence: number | null;
  corrected_text: string | null;
  charset_ok: boolean | null;
  bad_chars: string[];
}

export interface SegmentRequest {
  min_gap?: number;
  min_height?: number;
  deskew?: boolean;
  force?: boolean;
}

export interface OcrOut {
  text: string;
  confidence: number;
}

export interface FinetuneRequest {
  base_model: string;
  documents?: string[];
  epochs?: number;
  batch_size?: number;
  learning_rate?: number;
  seed?: number;
  eval_every?: number;
}

export interface CurvePointOut {
  epoch: number;
  train_loss: number;
  val_loss: number;
  train_cer: number;
  val_cer: number;
}

export type JobStatus = "queued" | "running" | "done" | "failed";

export interface JobOut {
  id: string;
  kind: string;
  status: JobStatus;
  progress_epoch: number;
  progress_total: number;
  curve: CurvePointOut[];
  result_model: string | null;
  error: string | null;
  created_at: string;
  finished_at: string | null;
}

export interface ModelOut {
  name: string;
  charset_size: number;
  provenance: Record<string, unknown>;
}

/** Error carrying the HTTP status and the server's message verbatim. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface UploadFilePayload {
  name: string;
  data: Blob | Uint8Array;
  type?: string;
}

type FetchLike = typeof fetch;

export class ApiClient {
  private readonly base: string;

  constructor(
    baseUrl: string,
    private readonly token: string | null = null,
    private readonly fetchImpl: FetchLike = fetch,
  ) {
    this.base = baseUrl.replace(/\/+$/, "");
  }

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    const h: Record<string, string> = { ...extra };
    if (this.token) h["Authorization"] = `Bearer ${this.token}`;
    return h;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method, headers: this.headers() };
    if (body !== undefined) {
      init.headers = this.headers({ "Content-Type": "application/json" });
      init.body = JSON.stringify(body);
    }
    const res = await this.fetchImpl(`${this.base}${path}`, init);
    if (!res.ok) throw new ApiError(res.status, await extractDetail(res));
    return (await res.json()) as T;
  }

  async uploadDocument(file: UploadFilePayload): Promise<DocumentOut> {
    const form = new FormData();
    const blob =
      file.data instanceof Blob
        ? file.data
        : // Copy into a fresh ArrayBuffer-backed view to satisfy BlobPart.
          new Blob([new Uint8Array(file.data)], {
            type: file.type ?? "application/octet-stream",
          });
    form.append("file", blob, file.name);
    const res = await this.fetchImpl(`${this.base}/api/documents`, {
      method: "POST",
      headers: this.headers(),
      body: form,
    });
    if (!res.ok) throw new ApiError(res.status, await extractDetail(res));
    return (await res.json()) as DocumentOut;
  }

  listDocuments(): Promise<DocumentOut[]> {
    return this.request("GET", "/api/documents");
  }

  getDocument(docId: string): Promise<DocumentOut> {
    return this.request("GET", `/api/documents/${docId}`);
  }

  getPage(pageId: string): Promise<PageOut> {
    return this.request("GET", `/api/pages/${pageId}`);
  }

  pageImageUrl(pageId: string): string {
    return `${this.base}/api/pages/${pageId}/image`;
  }

  getPageLines(pageId: string): Promise<LineOut[]> {
    return this.request("GET", `/api/pages/${pageId}/lines`);
  }

  segmentPage(pageId: string, req: SegmentRequest = {}): Promise<LineOut[]> {
    return this.request("POST", `/api/pages/${pageId}/segment`, req);
  }

  putPageLines(pageId: string, boxes: Box[]): Promise<LineOut[]> {
    return this.request("PUT", `/api/pages/${pageId}/lines`, boxes);
  }

  getLine(lineId: string): Promise<LineOut> {
    return this.request("GET", `/api/lines/${lineId}`);
  }

  ocrLine(lineId: string, model?: string): Promise<OcrOut> {
    return this.request("POST", `/api/lines/${lineId}/ocr`, {
      model: model ?? null,
    });
  }

  correctLine(lineId: string, text: string): Promise<LineOut> {
    return this.request("PUT", `/api/lines/${lineId}/text`, { text });
  }

  exportUrl(documentId: string): string {
    return `${this.base}/api/export?document=${encodeURIComponent(documentId)}`;
  }

  async exportLabels(documentId: string): Promise<Uint8Array> {
    const res = await this.fetchImpl(this.exportUrl(documentId), {
      headers: this.headers(),
    });
    if (!res.ok) throw new ApiError(res.status, await extractDetail(res));
    return new Uint8Array(await res.arrayBuffer());
  }

  launchFinetune(req: FinetuneRequest): Promise<{ job_id: string }> {
    return this.request("POST", "/api/jobs/finetune", req);
  }

  listJobs(): Promise<JobOut[]> {
    return this.request("GET", "/api/jobs");
  }

  getJob(jobId: string): Promise<JobOut> {
    return this.request("GET", `/api/jobs/${jobId}`);
  }

  listModels(): Promise<ModelOut[]> {
    return this.request("GET", "/api/models");
  }
}

async function extractDetail(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (typeof body?.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return `HTTP ${res.status}`;
  }
}
