// Parser for the VXS1 voxel container served by /scenes/{id}.
// Payload is C row-major over (H, W, D): the vertical axis varies fastest.

export interface VoxelGrid {
  h: number;
  w: number;
  d: number;
  classes: number;
  data: Uint8Array;
}

export function parseVxs(buf: ArrayBuffer): VoxelGrid {
  const view = new DataView(buf);
  const magic = new TextDecoder().decode(new Uint8Array(buf, 0, 4));
  if (magic !== "VXS1") throw new Error("not a VXS1 payload");
  const h = view.getUint16(4, true);
  const w = view.getUint16(6, true);
  const d = view.getUint16(8, true);
  const classes = view.getUint8(10);
  const data = new Uint8Array(buf, 11);
  if (data.length !== h * w * d) {
    throw new Error(`payload size ${data.length} != ${h}*${w}*${d}`);
  }
  return { h, w, d, classes, data };
}

export function voxelAt(g: VoxelGrid, r: number, c: number, z: number): number {
  return g.data[(r * g.w + c) * g.d + z];
}

export function sliceAt(g: VoxelGrid, z: number): Uint8Array {
  const out = new Uint8Array(g.h * g.w);
  for (let r = 0; r < g.h; r++) {
    for (let c = 0; c < g.w; c++) {
      out[r * g.w + c] = voxelAt(g, r, c, z);
    }
  }
  return out;
}
