/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_entropyview_free: (a: number, b: number) => void;
export const __wbg_maskview_free: (a: number, b: number) => void;
export const __wbg_scene_free: (a: number, b: number) => void;
export const __wbg_uncertaintyview_free: (a: number, b: number) => void;
export const entropy_of_bump: (a: number, b: number, c: number) => [number, number, number];
export const entropyview_distribution: (a: number) => [number, number];
export const entropyview_entropy: (a: number) => number;
export const entropyview_normalized: (a: number) => number;
export const entropyview_spectrum: (a: number) => [number, number];
export const entropyview_uncertainty: (a: number) => number;
export const maskview_false_rate: (a: number) => number;
export const maskview_masked_fraction: (a: number) => number;
export const maskview_recall: (a: number) => number;
export const maskview_rgba: (a: number) => [number, number];
export const scene_frame: (a: number) => [number, number];
export const scene_height: (a: number) => number;
export const scene_mask_overlay: (a: number, b: number) => [number, number, number];
export const scene_new: (a: number) => [number, number, number];
export const scene_uncertainty: (a: number, b: number, c: number) => [number, number, number];
export const scene_width: (a: number) => number;
export const uncertaintyview_depth_rgba: (a: number) => [number, number];
export const uncertaintyview_mean_dynamic: (a: number) => number;
export const uncertaintyview_mean_static: (a: number) => number;
export const uncertaintyview_u_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
