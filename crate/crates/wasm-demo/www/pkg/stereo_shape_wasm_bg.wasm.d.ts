/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_completion_free: (a: number, b: number) => void;
export const __wbg_meshview_free: (a: number, b: number) => void;
export const __wbg_overlap_free: (a: number, b: number) => void;
export const box_overlap: (a: number, b: number, c: number, d: number) => [number, number, number];
export const complete_view: (a: number, b: number, c: number, d: number) => [number, number, number];
export const completion_completed: (a: number) => [number, number];
export const completion_mmd_completed: (a: number) => number;
export const completion_mmd_partial: (a: number) => number;
export const completion_partial: (a: number) => [number, number];
export const mesh_sphere: (a: number, b: number) => [number, number, number];
export const meshview_area: (a: number) => number;
export const meshview_closed: (a: number) => number;
export const meshview_indices: (a: number) => [number, number];
export const meshview_max_radius_error: (a: number) => number;
export const meshview_positions: (a: number) => [number, number];
export const meshview_triangle_count: (a: number) => number;
export const meshview_vertex_count: (a: number) => number;
export const overlap_footprints: (a: number) => [number, number];
export const overlap_intersection: (a: number) => number;
export const overlap_iou_3d: (a: number) => number;
export const overlap_iou_bev: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
