/* tslint:disable */
/* eslint-disable */

/**
 * Visible and completed object-frame clouds and their MMD.
 */
export class Completion {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly completed: Float32Array;
    readonly mmd_completed: number;
    readonly mmd_partial: number;
    readonly partial: Float32Array;
}

/**
 * Extracted isosurface with summary statistics.
 */
export class MeshView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly area: number;
    readonly closed: boolean;
    readonly indices: Uint32Array;
    readonly max_radius_error: number;
    /**
     * Vertex coordinates, `x y z` interleaved.
     */
    readonly positions: Float32Array;
    readonly triangle_count: number;
    readonly vertex_count: number;
}

/**
 * Overlap of two boxes given as `[x, y, z, h, w, l, yaw]`.
 */
export class Overlap {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Both footprints, four `(x, z)` corners each.
     */
    readonly footprints: Float64Array;
    /**
     * Ground-plane intersection area.
     */
    readonly intersection: number;
    readonly iou_3d: number;
    readonly iou_bev: number;
}

export function box_overlap(a: Float64Array, b: Float64Array): Overlap;

/**
 * Renders `shape` (`sphere`, `box-shell` or `toy-car`) frontally at
 * `depth` metres and mirror-completes it to `points` points.
 */
export function complete_view(shape: string, depth: number, points: number): Completion;

/**
 * Marching cubes on a sphere occupancy field over `[-0.5, 0.5]^3` with
 * `nodes` grid nodes per axis.
 */
export function mesh_sphere(radius: number, nodes: number): MeshView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_completion_free: (a: number, b: number) => void;
    readonly __wbg_meshview_free: (a: number, b: number) => void;
    readonly __wbg_overlap_free: (a: number, b: number) => void;
    readonly box_overlap: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly complete_view: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly completion_completed: (a: number) => [number, number];
    readonly completion_mmd_completed: (a: number) => number;
    readonly completion_mmd_partial: (a: number) => number;
    readonly completion_partial: (a: number) => [number, number];
    readonly mesh_sphere: (a: number, b: number) => [number, number, number];
    readonly meshview_area: (a: number) => number;
    readonly meshview_closed: (a: number) => number;
    readonly meshview_indices: (a: number) => [number, number];
    readonly meshview_max_radius_error: (a: number) => number;
    readonly meshview_positions: (a: number) => [number, number];
    readonly meshview_triangle_count: (a: number) => number;
    readonly meshview_vertex_count: (a: number) => number;
    readonly overlap_footprints: (a: number) => [number, number];
    readonly overlap_intersection: (a: number) => number;
    readonly overlap_iou_3d: (a: number) => number;
    readonly overlap_iou_bev: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
