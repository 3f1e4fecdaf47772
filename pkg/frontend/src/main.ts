// Application wiring: editor on the left, generation/results on the right.

import { ApiClient, ApiError } from "./api.js";
import { GraphEditor } from "./editor.js";
import { ResultsPanel } from "./results.js";
import { EditorState } from "./state.js";
import { CountableClass, ROAD_TYPES, RoadType } from "./types.js";

export interface App {
  state: EditorState;
  editor: GraphEditor;
  results: ResultsPanel;
  api: ApiClient;
  saveGraph(): Promise<string>;
  generate(): Promise<void>;
  promptToGraph(): Promise<void>;
  editAndRegenerate(): Promise<void>;
}

function must<T extends HTMLElement>(root: ParentNode, sel: string): T {
  const el = root.querySelector<T>(sel);
  if (!el) throw new Error(`missing element ${sel}`);
  return el;
}

export function initApp(root: ParentNode = document, apiBase = ""): App {
  const api = new ApiClient(apiBase);
  const state = new EditorState();
  const editor = new GraphEditor(must<HTMLCanvasElement>(root, "#editor-canvas"), state);
  const results = new ResultsPanel(must<HTMLElement>(root, "#results"), api);

  const statusEl = must<HTMLElement>(root, "#status");
  const violationsEl = must<HTMLElement>(root, "#violations");
  const setStatus = (text: string) => { statusEl.textContent = text; };

  const roadSelect = must<HTMLSelectElement>(root, "#road-type");
  roadSelect.innerHTML = ROAD_TYPES.map((t) => `<option value="${t}">${t}</option>`).join("");
  roadSelect.addEventListener("change", () => state.setRoadType(roadSelect.value as RoadType));

  for (const cls of ["Vehicle", "Pedestrian", "Pole"] as CountableClass[]) {
    must<HTMLButtonElement>(root, `#add-${cls.toLowerCase()}`)
      .addEventListener("click", () => state.addInstance(cls));
  }

  const deleteBtn = must<HTMLButtonElement>(root, "#delete-node");
  deleteBtn.addEventListener("click", () => {
    // the road node is not selectable, so deletion can never remove it
    if (state.selection) state.removeInstance(state.selection);
  });

  const togglePos = must<HTMLButtonElement>(root, "#toggle-position");
  togglePos.addEventListener("click", () => {
    const node = state.selected();
    if (!node) return;
    state.setPatch(node.id, node.patch ? null : [3, 3]);
  });

  state.onChange(() => {
    const violations = state.violations();
    violationsEl.textContent = violations.map((v) => v.message).join("; ");
    const blocked = violations.length > 0;
    must<HTMLButtonElement>(root, "#save-graph").disabled = blocked;
    must<HTMLButtonElement>(root, "#generate-btn").disabled = blocked;
    deleteBtn.disabled = state.selection === null;
  });

  async function saveGraph(): Promise<string> {
    const violations = state.violations();
    if (violations.length) {
      throw new ApiError(422, violations.map((v) => v.message).join("; "), violations);
    }
    const gid = await api.postGraph(state.toGraph());
    state.lastGraphId = gid;
    state.dirty = false;
    must<HTMLElement>(root, "#graph-id").textContent = gid;
    setStatus(`graph saved as ${gid}`);
    return gid;
  }

  async function generate(): Promise<void> {
    try {
      const gid = state.dirty || !state.lastGraphId ? await saveGraph() : state.lastGraphId;
      const seedRaw = must<HTMLInputElement>(root, "#seed-input").value;
      const tauRaw = must<HTMLInputElement>(root, "#tau-input").value;
      const seed = seedRaw === "" ? undefined : parseInt(seedRaw, 10);
      const tau = tauRaw === "" ? undefined : parseFloat(tauRaw);
      setStatus("generating...");
      const jobId = await api.generate(gid, seed, tau);
      state.lastJobId = jobId;
      must<HTMLElement>(root, "#job-id").textContent = jobId;
      const rec = await api.pollJob(jobId);
      if (rec.state === "failed") {
        setStatus(`job failed: ${rec.error}`);
        return;
      }
      state.lastSidecar = rec.sidecar;
      await results.show(rec);
      setStatus(`done: scene ${rec.scene_id}`);
    } catch (err) {
      // edits are retained; only the status line reports the failure
      setStatus(`error: ${err instanceof Error ? err.message : String(err)}`);
    }
  }

  async function promptToGraph(): Promise<void> {
    const prompt = must<HTMLInputElement>(root, "#prompt-input").value;
    try {
      const graph = await api.textToGraph(prompt);
      state.loadGraph(graph);
      setStatus("prompt converted; review the graph and generate");
    } catch (err) {
      setStatus(`error: ${err instanceof Error ? err.message : String(err)}`);
    }
  }

  async function editAndRegenerate(): Promise<void> {
    if (!state.lastGraphId) return;
    const graph = await api.getGraph(state.lastGraphId);
    state.loadGraph(graph);
    setStatus("last generated graph loaded into the editor");
  }

  must<HTMLButtonElement>(root, "#save-graph")
    .addEventListener("click", () => { void saveGraph().catch((e) => setStatus(String(e))); });
  must<HTMLButtonElement>(root, "#generate-btn")
    .addEventListener("click", () => { void generate(); });
  must<HTMLButtonElement>(root, "#prompt-btn")
    .addEventListener("click", () => { void promptToGraph(); });
  must<HTMLButtonElement>(root, "#edit-regenerate")
    .addEventListener("click", () => { void editAndRegenerate(); });

  return { state, editor, results, api, saveGraph, generate, promptToGraph, editAndRegenerate };
}

declare global {
  interface Window { __API_BASE__?: string; graphsceneApp?: App; }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.graphsceneApp = initApp(document, window.__API_BASE__ ?? "");
}
