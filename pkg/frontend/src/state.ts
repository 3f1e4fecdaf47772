// Editor state: the working graph plus selection/dirty bookkeeping.
//
// Road-connectivity edges are structural (every instance links to the road
// node) and proximity edges are derived from patch distance with the same
// threshold the backend extractor uses (8 BEV cells = 2 patch cells), so the
// diagram the user sees is exactly the graph the server receives.

import {
  COUNTABLE_CLASSES,
  CountableClass,
  EdgeJson,
  InstanceNodeJson,
  MAX_NODES,
  PATCH_GRID,
  ROAD_NODE_ID,
  ROAD_TYPES,
  RoadType,
  SceneGraphJson,
  SceneSidecar,
  Violation,
} from "./types.js";

const PROXIMITY_PATCH_DIST = 2; // patches; 2 * 4 cells == backend delta_d

export function validateGraph(g: SceneGraphJson): Violation[] {
  const out: Violation[] = [];
  if (!ROAD_TYPES.includes(g.road.type)) {
    out.push({ code: "bad_road_type", message: `unknown road type ${g.road.type}` });
  }
  const seen = new Set<string>();
  for (const n of g.instances) {
    if (!n.id) out.push({ code: "empty_id", message: "instance with empty id" });
    if (n.id === ROAD_NODE_ID) {
      out.push({ code: "reserved_id", message: `id '${n.id}' is reserved`, subject: n.id });
    }
    if (seen.has(n.id)) {
      out.push({ code: "duplicate_id", message: `duplicate id '${n.id}'`, subject: n.id });
    }
    seen.add(n.id);
    if (!COUNTABLE_CLASSES.includes(n.class)) {
      out.push({ code: "bad_class", message: `class ${n.class} is not countable`, subject: n.id });
    }
    if (n.patch !== null) {
      const [r, c] = n.patch;
      if (!(r >= 0 && r < PATCH_GRID && c >= 0 && c < PATCH_GRID)) {
        out.push({ code: "patch_range", message: `patch [${r},${c}] out of range`, subject: n.id });
      }
    }
  }
  if (g.instances.length + 1 > MAX_NODES) {
    out.push({ code: "too_many_nodes", message: `${g.instances.length + 1} nodes exceeds ${MAX_NODES}` });
  }
  for (const e of g.edges) {
    const known = (id: string) => id === ROAD_NODE_ID || seen.has(id);
    if (!known(e.a) || !known(e.b)) {
      out.push({ code: "dangling_endpoint", message: `edge ${e.a}-${e.b} has unknown endpoint` });
    }
  }
  return out;
}

function derivedEdges(instances: InstanceNodeJson[]): EdgeJson[] {
  const edges: EdgeJson[] = instances.map((n) => ({ kind: "road", a: n.id, b: ROAD_NODE_ID }));
  for (let i = 0; i < instances.length; i++) {
    for (let j = i + 1; j < instances.length; j++) {
      const a = instances[i].patch;
      const b = instances[j].patch;
      if (a && b && Math.hypot(a[0] - b[0], a[1] - b[1]) < PROXIMITY_PATCH_DIST) {
        edges.push({ kind: "proximity", a: instances[i].id, b: instances[j].id });
      }
    }
  }
  return edges;
}

export class EditorState {
  roadType: RoadType = "StraightRoad";
  instances: InstanceNodeJson[] = [];
  selection: string | null = null;
  dirty = false;
  lastGraphId: string | null = null;
  lastJobId: string | null = null;
  lastSidecar: SceneSidecar | null = null;
  private counter = 0;
  private listeners: (() => void)[] = [];

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private bump(): void {
    this.dirty = true;
    for (const fn of this.listeners) fn();
  }

  addInstance(cls: CountableClass, patch: [number, number] | null = null): string {
    const prefix = { Vehicle: "veh", Pedestrian: "ped", Pole: "pol" }[cls];
    const id = `${prefix}${this.counter++}`;
    this.instances.push({ id, class: cls, patch });
    this.selection = id;
    this.bump();
    return id;
  }

  removeInstance(id: string): void {
    this.instances = this.instances.filter((n) => n.id !== id);
    if (this.selection === id) this.selection = null;
    this.bump();
  }

  setPatch(id: string, patch: [number, number] | null): void {
    const node = this.instances.find((n) => n.id === id);
    if (!node) return;
    node.patch = patch;
    this.bump();
  }

  setRoadType(t: RoadType): void {
    this.roadType = t;
    this.bump();
  }

  select(id: string | null): void {
    this.selection = id;
    for (const fn of this.listeners) fn();
  }

  selected(): InstanceNodeJson | null {
    return this.instances.find((n) => n.id === this.selection) ?? null;
  }

  toGraph(): SceneGraphJson {
    return {
      road: { type: this.roadType },
      instances: this.instances.map((n) => ({ ...n, patch: n.patch ? [...n.patch] : null })),
      edges: derivedEdges(this.instances),
      meta: { source: "ui" },
    };
  }

  loadGraph(g: SceneGraphJson): void {
    this.roadType = g.road.type;
    this.instances = g.instances.map((n) => ({ ...n, patch: n.patch ? [...n.patch] : null }));
    this.selection = null;
    this.counter = this.instances.length;
    // keep generated ids collision-free with loaded ones
    while (this.instances.some((n) => /^(veh|ped|pol)\d+$/.test(n.id) &&
           parseInt(n.id.replace(/^\D+/, ""), 10) >= this.counter)) {
      this.counter++;
    }
    this.bump();
  }

  violations(): Violation[] {
    return validateGraph(this.toGraph());
  }

  requestedCounts(): Record<CountableClass, number> {
    const counts = { Vehicle: 0, Pedestrian: 0, Pole: 0 } as Record<CountableClass, number>;
    for (const n of this.instances) counts[n.class]++;
    return counts;
  }
}
