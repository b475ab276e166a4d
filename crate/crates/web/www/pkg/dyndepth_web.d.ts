/* tslint:disable */
/* eslint-disable */

export class EntropyView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    distribution(): Float64Array;
    entropy(): number;
    normalized(): number;
    /**
     * Normalized magnitude spectrum.
     */
    spectrum(): Float64Array;
    uncertainty(): number;
}

export class MaskView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Share of static pixels masked.
     */
    false_rate(): number;
    masked_fraction(): number;
    /**
     * Share of moving-sprite pixels masked.
     */
    recall(): number;
    rgba(): Uint8Array;
}

/**
 * One seeded dynamic scene with the losses at its true depth.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Reference frame as RGBA bytes.
     */
    frame(): Uint8Array;
    height(): number;
    /**
     * Reference frame with masked pixels tinted red and moving-sprite
     * pixels the dynamic mask missed tinted blue.
     */
    mask_overlay(beta: number): MaskView;
    constructor(seed: number);
    /**
     * Plane-sweep uncertainty against the previous frame.
     */
    uncertainty(temperature: number, cvam: boolean): UncertaintyView;
    width(): number;
}

export class UncertaintyView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Soft-argmin depth, colored by inverse depth.
     */
    depth_rgba(): Uint8Array;
    mean_dynamic(): number;
    mean_static(): number;
    u_rgba(): Uint8Array;
}

/**
 * Spectral entropy and uncertainty of a Gaussian bump of width `sigma`
 * bins centered at `center` over `bins` depth hypotheses.
 */
export function entropy_of_bump(bins: number, center: number, sigma: number): EntropyView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_entropyview_free: (a: number, b: number) => void;
    readonly __wbg_maskview_free: (a: number, b: number) => void;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly __wbg_uncertaintyview_free: (a: number, b: number) => void;
    readonly entropy_of_bump: (a: number, b: number, c: number) => [number, number, number];
    readonly entropyview_distribution: (a: number) => [number, number];
    readonly entropyview_entropy: (a: number) => number;
    readonly entropyview_normalized: (a: number) => number;
    readonly entropyview_spectrum: (a: number) => [number, number];
    readonly entropyview_uncertainty: (a: number) => number;
    readonly maskview_false_rate: (a: number) => number;
    readonly maskview_masked_fraction: (a: number) => number;
    readonly maskview_recall: (a: number) => number;
    readonly maskview_rgba: (a: number) => [number, number];
    readonly scene_frame: (a: number) => [number, number];
    readonly scene_height: (a: number) => number;
    readonly scene_mask_overlay: (a: number, b: number) => [number, number, number];
    readonly scene_new: (a: number) => [number, number, number];
    readonly scene_uncertainty: (a: number, b: number, c: number) => [number, number, number];
    readonly scene_width: (a: number) => number;
    readonly uncertaintyview_depth_rgba: (a: number) => [number, number];
    readonly uncertaintyview_mean_dynamic: (a: number) => number;
    readonly uncertaintyview_mean_static: (a: number) => number;
    readonly uncertaintyview_u_rgba: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
