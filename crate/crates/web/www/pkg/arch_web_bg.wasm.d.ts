/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const scene_add_noise: (a: number, b: number) => number;
export const scene_clean: (a: number, b: number) => number;
export const scene_new: (a: number, b: number) => number;
export const scene_occupancy: (a: number) => [number, number];
export const scene_occupied: (a: number) => number;
export const scene_resolution: (a: number) => number;
export const scene_toggle: (a: number, b: number, c: number, d: number) => void;
export const scene_top_view: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
