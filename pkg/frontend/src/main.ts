import { ApiClient } from "./api.js";
import { buildConstraintButtons, downloadSketch, Editor, selectionLabel } from "./editor.js";
import { EditorStore, serverFromQuery } from "./state.js";
import { SketchJson } from "./types.js";

const STARTER: SketchJson = {
  primitives: [
    { kind: "line", construction: false, params: [-0.4, -0.25, 0.4, -0.25] },
    { kind: "line", construction: false, params: [0.4, -0.25, 0.4, 0.25] },
    { kind: "line", construction: false, params: [0.4, 0.25, -0.4, 0.25] },
    { kind: "line", construction: false, params: [-0.4, 0.25, -0.4, -0.25] },
  ],
  constraints: [
    { kind: "horizontal", refs: [{ primitive: 0, slot: "whole" }] },
    { kind: "coincident", refs: [{ primitive: 0, slot: "second" }, { primitive: 1, slot: "first" }] },
    { kind: "vertical", refs: [{ primitive: 1, slot: "whole" }] },
    { kind: "coincident", refs: [{ primitive: 1, slot: "second" }, { primitive: 2, slot: "first" }] },
    { kind: "horizontal", refs: [{ primitive: 2, slot: "whole" }] },
    { kind: "coincident", refs: [{ primitive: 2, slot: "second" }, { primitive: 3, slot: "first" }] },
    { kind: "coincident", refs: [{ primitive: 3, slot: "second" }, { primitive: 0, slot: "first" }] },
    { kind: "vertical", refs: [{ primitive: 3, slot: "whole" }] },
  ],
};

function main() {
  const serverUrl = serverFromQuery(window.location.search);
  const api = new ApiClient(serverUrl);
  const store = new EditorStore(api, STARTER);

  const canvas = document.getElementById("canvas") as HTMLCanvasElement;
  const panel = document.getElementById("panel")!;
  const banner = document.getElementById("banner")!;
  const ckpt = document.getElementById("checkpoint") as HTMLInputElement;
  const editor = new Editor(store, canvas, panel, banner, ckpt);

  buildConstraintButtons(document.getElementById("constraint-buttons")!, editor);
  document.getElementById("server-label")!.textContent = serverUrl;

  const selLabel = document.getElementById("selection")!;
  store.subscribe((st) => {
    selLabel.textContent = `selection: ${selectionLabel(st.selection)}` +
      (st.previousSelection ? ` (prev ${selectionLabel(st.previousSelection)})` : "");
  });

  document.getElementById("autoconstrain")!.addEventListener("click", () => {
    editor.autoconstrain();
  });
  document.getElementById("refit")!.addEventListener("click", () => editor.refit());
  document.getElementById("save")!.addEventListener("click", () => {
    downloadSketch(store.state.sketch);
  });
  const fileInput = document.getElementById("load") as HTMLInputElement;
  fileInput.addEventListener("change", async () => {
    const f = fileInput.files?.[0];
    if (!f) return;
    try {
      const parsed = JSON.parse(await f.text()) as SketchJson;
      store.loadSketch(parsed);
      editor.refit();
    } catch (e) {
      banner.textContent = `could not load: ${(e as Error).message}`;
    }
  });

  void api.healthz().then((ok) => {
    if (!ok) banner.textContent = `server ${serverUrl} unreachable`;
  }).catch(() => {
    banner.textContent = `server ${serverUrl} unreachable`;
  });
}

main();
