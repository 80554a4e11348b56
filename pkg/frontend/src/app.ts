/**
 * Application shell: wires the store to the document list, page overlay,
 * transcript editor, model picker, and job panel. Configuration (API base
 * URL and optional bearer token) comes from query parameters or defaults
 * to the serving origin.
 */

import { ApiClient } from "./api.js";
import { splitBoxHorizontal } from "./geometry.js";
import { WorkspaceStore } from "./store.js";
import { BoxOverlay } from "./components/boxOverlay.js";
import { JobPanel } from "./components/jobPanel.js";
import { TranscriptEditor } from "./components/transcriptEditor.js";

function requireEl<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

export function bootstrap(): void {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get("api") ?? window.location.origin;
  const token = params.get("token");
  const api = new ApiClient(baseUrl, token);
  const store = new WorkspaceStore(api);

  const docList = requireEl<HTMLUListElement>("documents");
  const canvas = requireEl<HTMLCanvasElement>("page-canvas");
  const editorRoot = requireEl<HTMLDivElement>("transcripts");
  const jobRoot = requireEl<HTMLDivElement>("job-panel");
  const modelPicker = requireEl<HTMLSelectElement>("model-picker");
  const errorToast = requireEl<HTMLDivElement>("error-toast");
  const uploadInput = requireEl<HTMLInputElement>("upload-input");
  const segmentButton = requireEl<HTMLButtonElement>("segment-button");
  const saveLayoutButton = requireEl<HTMLButtonElement>("save-layout-button");
  const splitButton = requireEl<HTMLButtonElement>("split-button");

  const editor = new TranscriptEditor(editorRoot, store);
  const jobs = new JobPanel(jobRoot, store);
  let selectedBox = 0;
  let overlay: BoxOverlay | null = null;

  function renderDocuments(): void {
    const state = store.getState();
    docList.replaceChildren();
    for (const doc of state.documents) {
      const li = document.createElement("li");
      const link = document.createElement("a");
      link.href = "#";
      link.textContent = `${doc.filename} (${doc.n_pages} page${doc.n_pages === 1 ? "" : "s"})`;
      link.addEventListener("click", (e) => {
        e.preventDefault();
        void store.openDocument(doc.document_id);
      });
      li.appendChild(link);
      if (doc.document_id === state.selectedDocumentId) li.className = "selected";
      docList.appendChild(li);
    }
  }

  function renderModels(): void {
    const state = store.getState();
    modelPicker.replaceChildren();
    for (const model of state.models) {
      const option = document.createElement("option");
      option.value = model.name;
      option.textContent = model.name;
      option.selected = model.name === state.selectedModel;
      modelPicker.appendChild(option);
    }
  }

  function renderPage(): void {
    const state = store.getState();
    const pv = state.pageView;
    if (!pv) {
      overlay = null;
      return;
    }
    canvas.width = pv.page.width;
    canvas.height = pv.page.height;
    if (!overlay) {
      overlay = new BoxOverlay(canvas, {
        pageWidth: pv.page.width,
        pageHeight: pv.page.height,
        onChange: (boxes) => store.setDraftBoxes(boxes),
        onSelect: (index) => (selectedBox = index),
      });
      const image = new Image();
      image.src = api.pageImageUrl(pv.page.id);
      image.addEventListener("load", () => overlay?.setImage(image));
    }
    const boxes = pv.draftBoxes ?? pv.lines.map((l) => l.record.box);
    overlay.setBoxes(
      boxes.map((box, i) => ({
        box,
        status: pv.lines[i]?.record.status ?? "unprocessed",
        selected: i === selectedBox,
      })),
    );
    saveLayoutButton.disabled = pv.draftBoxes === null;
  }

  store.subscribe((state) => {
    renderDocuments();
    renderModels();
    renderPage();
    editor.render();
    jobs.render();
    errorToast.textContent = state.error ?? "";
    errorToast.hidden = !state.error;
    document.title = store.hasUnsavedEdits ? "* kalchas" : "kalchas";
  });

  uploadInput.addEventListener("change", () => {
    const file = uploadInput.files?.[0];
    if (!file) return;
    const problem = store.validateUpload(file.name, file.size);
    if (problem) {
      errorToast.textContent = problem;
      errorToast.hidden = false;
      return;
    }
    void store
      .uploadDocument({ name: file.name, data: file, type: file.type })
      .then((doc) => store.openDocument(doc.document_id))
      .catch(() => undefined); // message already shown via state.error
  });

  segmentButton.addEventListener("click", () => void store.autoSegment());
  saveLayoutButton.addEventListener("click", () => void store.saveLayout());
  splitButton.addEventListener("click", () => {
    const boxes = store.currentBoxes();
    if (!boxes[selectedBox]) return;
    const [top, bottom] = splitBoxHorizontal(boxes[selectedBox]);
    boxes.splice(selectedBox, 1, top, bottom);
    store.setDraftBoxes(boxes);
  });
  modelPicker.addEventListener("change", () => {
    store.selectModel(modelPicker.value || null);
  });

  void store.refresh();
}

if (typeof document !== "undefined" && document.getElementById("documents")) {
  bootstrap();
}
