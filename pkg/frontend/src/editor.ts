// Canvas node-link editor over the 8x8 patch grid.
//
// Positioned nodes sit at their patch cell; position-unknown nodes queue in a
// tray below the grid; the road node is a bar above. Dragging a node onto the
// grid sets its patch, dragging into the tray clears it. Rendering degrades
// to a no-op when no 2D context exists (headless test environments).

import { EditorState } from "./state.js";
import { PATCH_GRID } from "./types.js";

const CELL = 56;
const GRID_PX = CELL * PATCH_GRID;
const TRAY_H = 64;
const ROAD_H = 40;

export const CANVAS_W = GRID_PX;
export const CANVAS_H = ROAD_H + GRID_PX + TRAY_H;

const NODE_COLORS: Record<string, string> = {
  Vehicle: "#3366e6", Pedestrian: "#e63333", Pole: "#f0c828",
};

export class GraphEditor {
  private ctx: CanvasRenderingContext2D | null;
  private dragging: string | null = null;

  constructor(private canvas: HTMLCanvasElement, private state: EditorState) {
    canvas.width = CANVAS_W;
    canvas.height = CANVAS_H;
    this.ctx = canvas.getContext ? canvas.getContext("2d") : null;
    state.onChange(() => this.render());
    canvas.addEventListener("mousedown", (e) => this.onDown(e));
    canvas.addEventListener("mousemove", (e) => this.onMove(e));
    canvas.addEventListener("mouseup", (e) => this.onUp(e));
    this.render();
  }

  private nodeCenter(id: string): [number, number] {
    const node = this.state.instances.find((n) => n.id === id);
    if (!node) return [GRID_PX / 2, ROAD_H / 2];
    if (node.patch) {
      const [r, c] = node.patch;
      return [c * CELL + CELL / 2, ROAD_H + r * CELL + CELL / 2];
    }
    const trayIdx = this.state.instances.filter((n) => !n.patch).findIndex((n) => n.id === id);
    return [30 + trayIdx * 52, ROAD_H + GRID_PX + TRAY_H / 2];
  }

  private hitTest(x: number, y: number): string | null {
    for (const node of [...this.state.instances].reverse()) {
      const [cx, cy] = this.nodeCenter(node.id);
      if (Math.hypot(x - cx, y - cy) <= 20) return node.id;
    }
    return null;
  }

  private eventPos(e: MouseEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    return [e.clientX - rect.left, e.clientY - rect.top];
  }

  private onDown(e: MouseEvent): void {
    const [x, y] = this.eventPos(e);
    const hit = this.hitTest(x, y);
    this.state.select(hit);
    this.dragging = hit;
  }

  private onMove(e: MouseEvent): void {
    if (!this.dragging) return;
    e.preventDefault();
  }

  private onUp(e: MouseEvent): void {
    if (!this.dragging) return;
    const [x, y] = this.eventPos(e);
    this.dropAt(this.dragging, x, y);
    this.dragging = null;
  }

  dropAt(id: string, x: number, y: number): void {
    if (y >= ROAD_H && y < ROAD_H + GRID_PX && x >= 0 && x < GRID_PX) {
      const r = Math.floor((y - ROAD_H) / CELL);
      const c = Math.floor(x / CELL);
      this.state.setPatch(id, [r, c]);
    } else if (y >= ROAD_H + GRID_PX) {
      this.state.setPatch(id, null); // tray: position unknown
    }
  }

  render(): void {
    const ctx = this.ctx;
    if (!ctx) return;
    ctx.clearRect(0, 0, CANVAS_W, CANVAS_H);

    // road node bar
    ctx.fillStyle = "#555";
    ctx.fillRect(0, 0, GRID_PX, ROAD_H - 8);
    ctx.fillStyle = "#fff";
    ctx.font = "14px sans-serif";
    ctx.fillText(`road: ${this.state.roadType}`, 10, ROAD_H / 2);

    // patch grid
    ctx.strokeStyle = "#ddd";
    for (let i = 0; i <= PATCH_GRID; i++) {
      ctx.beginPath();
      ctx.moveTo(i * CELL, ROAD_H);
      ctx.lineTo(i * CELL, ROAD_H + GRID_PX);
      ctx.stroke();
      ctx.beginPath();
      ctx.moveTo(0, ROAD_H + i * CELL);
      ctx.lineTo(GRID_PX, ROAD_H + i * CELL);
      ctx.stroke();
    }

    // tray
    ctx.fillStyle = "#f3f3f3";
    ctx.fillRect(0, ROAD_H + GRID_PX, GRID_PX, TRAY_H);
    ctx.fillStyle = "#999";
    ctx.fillText("position unknown", GRID_PX - 140, ROAD_H + GRID_PX + 20);

    // edges
    const graph = this.state.toGraph();
    for (const edge of graph.edges) {
      const [x1, y1] = edge.a === "road" ? [GRID_PX / 2, ROAD_H - 8] : this.nodeCenter(edge.a);
      const [x2, y2] = edge.b === "road" ? [GRID_PX / 2, ROAD_H - 8] : this.nodeCenter(edge.b);
      ctx.strokeStyle = edge.kind === "road" ? "#bbb" : "#e08030";
      ctx.beginPath();
      ctx.moveTo(x1, y1);
      ctx.lineTo(x2, y2);
      ctx.stroke();
    }

    // nodes
    for (const node of this.state.instances) {
      const [cx, cy] = this.nodeCenter(node.id);
      ctx.beginPath();
      ctx.arc(cx, cy, 18, 0, Math.PI * 2);
      ctx.fillStyle = NODE_COLORS[node.class] ?? "#888";
      ctx.fill();
      if (node.id === this.state.selection) {
        ctx.lineWidth = 3;
        ctx.strokeStyle = "#000";
        ctx.stroke();
        ctx.lineWidth = 1;
      }
      ctx.fillStyle = "#fff";
      ctx.fillText(node.id, cx - 14, cy + 4);
    }
  }
}
