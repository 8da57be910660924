/** Client-side request validation mirroring the server's rules.
 *
 * The service rejects a request when any of these hold; the client must agree
 * verdict-for-verdict so a draft that passes here is never bounced by the
 * server (parity is pinned by a golden fixture suite in the tests).
 */
import { InfillRequestWire, MetadataWire, PoseWire, ValidationIssue } from './types.js';

// wire quaternions may be off unit norm by this much
export const QUAT_WIRE_ATOL = 1e-3;

function isFiniteNumber(v: unknown): v is number {
    return typeof v === 'number' && Number.isFinite(v);
}

function checkPose(pose: unknown, J: number, field: string, issues: ValidationIssue[]): void {
    const p = pose as PoseWire | null | undefined;
    if (!p || typeof p !== 'object' || !Array.isArray(p.positions) || !Array.isArray(p.rotations)) {
        issues.push({ field, message: 'pose must carry positions and rotations arrays' });
        return;
    }
    if (p.positions.length !== J || p.positions.some((row) => !Array.isArray(row) || row.length !== 3)) {
        issues.push({ field: `${field}.positions`, message: `expected ${J}x3 joint positions` });
        return;
    }
    if (p.rotations.length !== J || p.rotations.some((row) => !Array.isArray(row) || row.length !== 4)) {
        issues.push({ field: `${field}.rotations`, message: `expected ${J}x4 quaternions [w,x,y,z]` });
        return;
    }
    if (!p.positions.every((row) => row.every(isFiniteNumber))) {
        issues.push({ field: `${field}.positions`, message: 'non-finite component' });
        return;
    }
    if (!p.rotations.every((row) => row.every(isFiniteNumber))) {
        issues.push({ field: `${field}.rotations`, message: 'non-finite component' });
        return;
    }
    for (let j = 0; j < J; j++) {
        const q = p.rotations[j];
        const norm = Math.hypot(q[0], q[1], q[2], q[3]);
        if (Math.abs(norm - 1.0) > QUAT_WIRE_ATOL) {
            issues.push({
                field: `${field}.rotations`,
                message: `joint ${j} quaternion norm ${norm.toFixed(6)} outside 1 +/- ${QUAT_WIRE_ATOL}`,
            });
            return;
        }
    }
}

/** Validate a draft against loaded metadata; empty issue list means the server will accept it. */
export function validateRequest(req: InfillRequestWire, meta: MetadataWire): ValidationIssue[] {
    const issues: ValidationIssue[] = [];
    const J = meta.skeleton.joint_names.length;

    if (!Number.isInteger(req.T)) {
        issues.push({ field: 'T', message: 'T must be an integer frame count' });
    } else if (req.T > meta.T_max) {
        issues.push({ field: 'T', message: `T=${req.T} exceeds T_max=${meta.T_max}` });
    } else if (req.T < 2) {
        issues.push({ field: 'T', message: `T=${req.T} below the 2-frame minimum` });
    }

    if (typeof req.label === 'string') {
        if (!meta.labels.includes(req.label)) {
            issues.push({ field: 'label', message: `unknown label '${req.label}'` });
        }
    } else if (Number.isInteger(req.label)) {
        if (req.label < 0 || req.label >= meta.labels.length) {
            issues.push({ field: 'label', message: `label id ${req.label} out of range` });
        }
    } else {
        issues.push({ field: 'label', message: 'label must be a name or an integer id' });
    }

    if (req.fps !== undefined && req.fps !== null && !isFiniteNumber(req.fps)) {
        issues.push({ field: 'fps', message: 'fps must be a finite number' });
    }

    checkPose(req.start, J, 'start', issues);
    checkPose(req.target, J, 'target', issues);

    if (req.anchor !== undefined && req.anchor !== null) {
        const frame = req.anchor.frame;
        if (!Number.isInteger(frame)) {
            issues.push({ field: 'anchor.frame', message: 'anchor frame must be an integer' });
        } else if (!(1 < frame && frame < req.T)) {
            issues.push({
                field: 'anchor.frame',
                message: `frame ${frame} must lie strictly between 1 and T=${req.T}`,
            });
        }
        checkPose(req.anchor.pose, J, 'anchor.pose', issues);
    }

    return issues;
}

export function isValid(req: InfillRequestWire, meta: MetadataWire): boolean {
    return validateRequest(req, meta).length === 0;
}
