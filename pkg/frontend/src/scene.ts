/** Skeleton rendering: joints as spheres, bones as line segments.
 *
 * Everything here is plain scene-graph construction (no renderer), so the
 * same code runs in tests under node. The world is z-up, x-forward; cameras
 * are configured accordingly in main.ts.
 */
import * as THREE from 'three';

import { PoseWire, SkeletonWire } from './types.js';

/** Documented tint convention: start red, target blue, anchor green. */
export const POSE_COLORS = {
    start: 0xd94f4f,
    target: 0x4f6fd9,
    anchor: 0x4fd97a,
    playback: 0xe8e8e8,
} as const;

export type PoseRole = keyof typeof POSE_COLORS;

const JOINT_RADIUS = 0.035;

export class SkeletonActor {
    readonly group: THREE.Group;
    readonly role: PoseRole;
    private readonly parents: number[];
    private readonly joints: THREE.Mesh[];
    private readonly bones: THREE.LineSegments;
    private readonly bonePositions: Float32Array;

    constructor(skeleton: SkeletonWire, role: PoseRole) {
        this.role = role;
        this.parents = skeleton.parents.slice();
        this.group = new THREE.Group();
        this.group.name = `skeleton-${role}`;

        const color = POSE_COLORS[role];
        const jointMaterial = new THREE.MeshBasicMaterial({ color });
        const jointGeometry = new THREE.SphereGeometry(JOINT_RADIUS, 12, 8);
        this.joints = skeleton.joint_names.map((name) => {
            const mesh = new THREE.Mesh(jointGeometry, jointMaterial);
            mesh.name = name;
            this.group.add(mesh);
            return mesh;
        });

        // one segment per non-root joint
        this.bonePositions = new Float32Array(this.boneCount * 2 * 3);
        const boneGeometry = new THREE.BufferGeometry();
        boneGeometry.setAttribute('position', new THREE.BufferAttribute(this.bonePositions, 3));
        this.bones = new THREE.LineSegments(boneGeometry, new THREE.LineBasicMaterial({ color }));
        this.bones.name = `bones-${role}`;
        this.bones.frustumCulled = false;
        this.group.add(this.bones);
    }

    get jointCount(): number {
        return this.parents.length;
    }

    get boneCount(): number {
        return this.parents.length - 1;
    }

    setPose(pose: PoseWire): void {
        const pos = pose.positions;
        for (let j = 0; j < this.joints.length; j++) {
            this.joints[j].position.set(pos[j][0], pos[j][1], pos[j][2]);
        }
        let seg = 0;
        for (let j = 1; j < this.parents.length; j++) {
            const p = this.parents[j];
            this.bonePositions.set(pos[p], seg * 6);
            this.bonePositions.set(pos[j], seg * 6 + 3);
            seg += 1;
        }
        const attr = this.bones.geometry.getAttribute('position') as THREE.BufferAttribute;
        attr.needsUpdate = true;
        this.bones.geometry.computeBoundingSphere();
    }

    setVisible(visible: boolean): void {
        this.group.visible = visible;
    }
}

/** The full stage: key-pose ghosts plus the playback skeleton. */
export class MotionStage {
    readonly root: THREE.Group;
    readonly start: SkeletonActor;
    readonly target: SkeletonActor;
    readonly anchor: SkeletonActor;
    readonly playback: SkeletonActor;

    constructor(skeleton: SkeletonWire) {
        this.root = new THREE.Group();
        this.root.name = 'motion-stage';
        this.start = new SkeletonActor(skeleton, 'start');
        this.target = new SkeletonActor(skeleton, 'target');
        this.anchor = new SkeletonActor(skeleton, 'anchor');
        this.playback = new SkeletonActor(skeleton, 'playback');
        this.anchor.setVisible(false);
        for (const actor of [this.start, this.target, this.anchor, this.playback]) {
            this.root.add(actor.group);
        }
    }

    setKeyPoses(start: PoseWire, target: PoseWire, anchor: PoseWire | null): void {
        this.start.setPose(start);
        this.target.setPose(target);
        if (anchor) {
            this.anchor.setPose(anchor);
            this.anchor.setVisible(true);
        } else {
            this.anchor.setVisible(false);
        }
    }

    /** Show frame `cursor` (1-based) of the response; no frames hides playback. */
    showFrame(frames: PoseWire[] | null, cursor: number): void {
        if (!frames || frames.length === 0) {
            this.playback.setVisible(false);
            return;
        }
        const t = Math.min(Math.max(1, Math.round(cursor)), frames.length);
        this.playback.setPose(frames[t - 1]);
        this.playback.setVisible(true);
    }
}
