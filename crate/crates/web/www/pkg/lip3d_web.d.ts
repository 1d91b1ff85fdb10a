/* tslint:disable */
/* eslint-disable */

/**
 * Poses the resting lip lattice (angles in degrees, translation in mm) and
 * corrects it. Returns `{posed, corrected, recovered_deg, max_error_mm}`.
 */
export function pose_round_trip(yaw: number, roll: number, pitch: number, tx: number, ty: number, tz: number): string;

/**
 * Prior heatmap of a small synthetic corpus as SVG; `opposed` shows `1 − p`.
 */
export function prior_heatmap(n_speakers: number, n_sentences: number, seed: bigint, opposed: boolean): string;

/**
 * Vertical coordinate of one landmark over the 28 sampled frames for every
 * utterance of a small pose-jittered corpus, after posture correction.
 * Returns `{frames, series: [{speaker, sentence, y}]}`.
 */
export function trajectories(n_speakers: number, n_sentences: number, seed: bigint, landmark: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly pose_round_trip: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly prior_heatmap: (a: number, b: number, c: bigint, d: number) => [number, number, number, number];
    readonly trajectories: (a: number, b: number, c: bigint, d: number) => [number, number, number, number];
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
