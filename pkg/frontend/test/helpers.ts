/** Shared fixtures for the test suite. */
import { readFileSync } from 'node:fs';
import { dirname, resolve } from 'node:path';
import { fileURLToPath } from 'node:url';

import { InfillRequestWire, MetadataWire, PoseWire } from '../src/types.js';

const here = dirname(fileURLToPath(import.meta.url));
const cacheDir = resolve(here, '../.cache');

export function serviceUrl(): string {
    const raw = readFileSync(resolve(cacheDir, 'service.json'), 'utf8');
    return (JSON.parse(raw) as { baseUrl: string }).baseUrl;
}

export interface PoseLibrary {
    poses: Array<{ name: string; pose: PoseWire }>;
}

export function poseLibrary(): PoseLibrary {
    return JSON.parse(readFileSync(resolve(cacheDir, 'poses.json'), 'utf8'));
}

export function copyPose(pose: PoseWire): PoseWire {
    return {
        positions: pose.positions.map((r) => r.slice()),
        rotations: pose.rotations.map((r) => r.slice()),
    };
}

/** A couple of known-good unit-quaternion poses for offline tests. */
export function syntheticMeta(J = 4): MetadataWire {
    return {
        labels: ['walk', 'run', 'jump'],
        skeleton: {
            joint_names: Array.from({ length: J }, (_, j) => `joint${j}`),
            parents: Array.from({ length: J }, (_, j) => j - 1),
            ref_lengths: Array.from({ length: J }, (_, j) => (j === 0 ? 0 : 0.3)),
        },
        T_max: 32,
        model_version: 'test',
    };
}

export function restPose(J = 4): PoseWire {
    return {
        positions: Array.from({ length: J }, (_, j) => [0, 0, 1.0 - 0.3 * j]),
        rotations: Array.from({ length: J }, () => [1, 0, 0, 0]),
    };
}

export function baseRequest(start: PoseWire, target: PoseWire): InfillRequestWire {
    return { start: copyPose(start), target: copyPose(target), T: 32, label: 'walk', anchor: null, fps: 30 };
}

export interface GoldenFixture {
    name: string;
    request: InfillRequestWire;
    /** what the client-side validator should say; the live suite checks the
     *  server agrees on every fixture */
    expectValid: boolean;
}

/** Twenty requests spanning the accept/reject boundary of every rule. */
export function goldenFixtures(meta: MetadataWire, start: PoseWire, target: PoseWire): GoldenFixture[] {
    const J = meta.skeleton.joint_names.length;
    const make = (
        name: string,
        expectValid: boolean,
        mutate: (req: InfillRequestWire) => void,
    ): GoldenFixture => {
        const req = baseRequest(start, target);
        mutate(req);
        return { name, request: req, expectValid };
    };
    const anchorPose = copyPose(start);

    return [
        make('plain walk', true, () => undefined),
        make('run by name, short horizon', true, (r) => {
            r.label = 'run';
            r.T = 16;
        }),
        make('label by id', true, (r) => {
            r.label = meta.labels.length - 1;
        }),
        make('anchor mid-window', true, (r) => {
            r.anchor = { frame: 16, pose: copyPose(anchorPose) };
        }),
        make('anchor at first interior frame', true, (r) => {
            r.anchor = { frame: 2, pose: copyPose(anchorPose) };
        }),
        make('anchor at last interior frame', true, (r) => {
            r.anchor = { frame: r.T - 1, pose: copyPose(anchorPose) };
        }),
        make('custom fps', true, (r) => {
            r.fps = 60;
            r.T = 8;
        }),
        make('quats inside the wire tolerance', true, (r) => {
            r.start.rotations = r.start.rotations.map((q) => q.map((v) => v * 1.0005));
        }),
        make('horizon above T_max', false, (r) => {
            r.T = meta.T_max + 1;
        }),
        make('single-frame horizon', false, (r) => {
            r.T = 1;
        }),
        make('unknown label name', false, (r) => {
            r.label = 'sprint';
        }),
        make('label id out of range', false, (r) => {
            r.label = meta.labels.length;
        }),
        make('negative label id', false, (r) => {
            r.label = -1;
        }),
        make('anchor on the start frame', false, (r) => {
            r.anchor = { frame: 1, pose: copyPose(anchorPose) };
        }),
        make('anchor on the target frame', false, (r) => {
            r.anchor = { frame: r.T, pose: copyPose(anchorPose) };
        }),
        make('anchor past the horizon', false, (r) => {
            r.anchor = { frame: r.T + 8, pose: copyPose(anchorPose) };
        }),
        make('quat norm off by 1e-2', false, (r) => {
            r.start.rotations = r.start.rotations.map((q, j) => (j === 1 ? q.map((v) => v * 1.01) : q));
        }),
        make('positions missing a column', false, (r) => {
            r.target.positions = r.target.positions.map((p) => p.slice(0, 2));
        }),
        make('extra joint row', false, (r) => {
            r.start.positions = [...r.start.positions, [0, 0, 0]];
            r.start.rotations = [...r.start.rotations, [1, 0, 0, 0]];
        }),
        make('non-finite position', false, (r) => {
            r.start.positions[J - 1][2] = Number.NaN;
        }),
    ];
}
