// Mirrors the canonical scene-graph JSON contract of the backend service.

export type RoadType = "StraightRoad" | "TJunction" | "Crossroad" | "BendRoad" | "Others";
export type CountableClass = "Vehicle" | "Pedestrian" | "Pole";
export type EdgeKind = "proximity" | "road";

export const ROAD_TYPES: RoadType[] = [
  "StraightRoad", "TJunction", "Crossroad", "BendRoad", "Others",
];
export const COUNTABLE_CLASSES: CountableClass[] = ["Vehicle", "Pedestrian", "Pole"];

export const PATCH_GRID = 8;
export const MAX_NODES = 64;
export const ROAD_NODE_ID = "road";

export interface InstanceNodeJson {
  id: string;
  class: CountableClass;
  patch: [number, number] | null;
}

export interface EdgeJson {
  kind: EdgeKind;
  a: string;
  b: string;
}

export interface SceneGraphJson {
  road: { type: RoadType };
  instances: InstanceNodeJson[];
  edges: EdgeJson[];
  meta?: Record<string, unknown>;
}

export interface Violation {
  code: string;
  message: string;
  subject?: string;
}

export interface JobRecord {
  job_id: string;
  graph_id: string;
  seed: number;
  tau: number;
  state: "queued" | "running" | "done" | "failed";
  scene_id: string | null;
  error: string | null;
  sidecar: SceneSidecar | null;
}

export interface SceneSidecar {
  counts: Record<CountableClass, number>;
  requested_counts: Record<CountableClass, number>;
  road_type: RoadType;
  requested_road_type: RoadType;
  mae: number;
  jaccard: number;
  seed: number;
  graph_id: string;
}

// index-aligned with the backend palette
export const CLASS_COLORS: [number, number, number][] = [
  [40, 40, 40], [128, 128, 128], [204, 102, 51], [51, 102, 230],
  [230, 51, 51], [240, 200, 40], [46, 160, 67], [150, 110, 190],
];
export const CLASS_NAMES = [
  "Free", "Road", "Building", "Vehicle", "Pedestrian", "Pole", "Vegetation", "Other",
];
