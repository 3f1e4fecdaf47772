// Results panel: BEV image, per-layer voxel slice viewer, and the
// requested-vs-generated count table with mismatch highlighting.

import { ApiClient } from "./api.js";
import { parseVxs, sliceAt, VoxelGrid } from "./vxs.js";
import {
  CLASS_COLORS,
  COUNTABLE_CLASSES,
  JobRecord,
  SceneSidecar,
} from "./types.js";

export class ResultsPanel {
  private grid: VoxelGrid | null = null;

  constructor(private root: HTMLElement, private api: ApiClient) {
    const slider = this.slider();
    if (slider) slider.addEventListener("input", () => this.renderSlice());
  }

  private el<T extends HTMLElement>(sel: string): T | null {
    return this.root.querySelector<T>(sel);
  }

  private slider(): HTMLInputElement | null {
    return this.el<HTMLInputElement>("#slice-slider");
  }

  async show(job: JobRecord): Promise<void> {
    if (job.state !== "done" || !job.scene_id || !job.sidecar) return;
    const sceneId = job.scene_id;
    const img = this.el<HTMLImageElement>("#bev-img");
    if (img) img.src = this.api.bevUrl(sceneId);

    this.renderTable(job.sidecar);

    const bytes = await this.api.sceneBytes(sceneId);
    this.grid = parseVxs(bytes);
    const slider = this.slider();
    if (slider) {
      slider.max = String(this.grid.d - 1);
      slider.value = "0";
    }
    this.renderSlice();
  }

  renderTable(sidecar: SceneSidecar): void {
    const table = this.el<HTMLTableElement>("#counts-table");
    if (!table) return;
    const rows = COUNTABLE_CLASSES.map((cls) => {
      const want = sidecar.requested_counts[cls] ?? 0;
      const got = sidecar.counts[cls] ?? 0;
      const mismatch = want !== got ? " class=\"mismatch\"" : "";
      return `<tr data-class="${cls}"${mismatch}><td>${cls}</td>` +
        `<td class="requested">${want}</td><td class="generated">${got}</td></tr>`;
    });
    const roadMismatch = sidecar.requested_road_type !== sidecar.road_type
      ? " class=\"mismatch\"" : "";
    table.innerHTML =
      "<thead><tr><th></th><th>requested</th><th>generated</th></tr></thead><tbody>" +
      rows.join("") +
      `<tr id="road-row"${roadMismatch}><td>Road type</td>` +
      `<td class="requested">${sidecar.requested_road_type}</td>` +
      `<td class="generated">${sidecar.road_type}</td></tr>` +
      "</tbody>";
    const jaccard = this.el("#jaccard-cell");
    if (jaccard) jaccard.textContent = sidecar.jaccard.toFixed(3);
    const mae = this.el("#mae-cell");
    if (mae) mae.textContent = sidecar.mae.toFixed(3);
  }

  renderSlice(): void {
    const canvas = this.el<HTMLCanvasElement>("#slice-canvas");
    const slider = this.slider();
    if (!canvas || !slider || !this.grid) return;
    const z = parseInt(slider.value, 10) || 0;
    const label = this.el("#slice-label");
    if (label) label.textContent = `layer z=${z}`;
    const ctx = canvas.getContext ? canvas.getContext("2d") : null;
    if (!ctx) return;
    const scale = 8;
    canvas.width = this.grid.w * scale;
    canvas.height = this.grid.h * scale;
    const slice = sliceAt(this.grid, z);
    for (let r = 0; r < this.grid.h; r++) {
      for (let c = 0; c < this.grid.w; c++) {
        const [cr, cg, cb] = CLASS_COLORS[slice[r * this.grid.w + c]] ?? [0, 0, 0];
        ctx.fillStyle = `rgb(${cr},${cg},${cb})`;
        ctx.fillRect(c * scale, r * scale, scale, scale);
      }
    }
  }
}
