/** Wire types for the inference service (positions in meters, quaternions [w, x, y, z]). */

export interface PoseWire {
    positions: number[][];
    rotations: number[][];
}

export interface AnchorWire {
    frame: number;
    pose: PoseWire;
}

export interface InfillRequestWire {
    start: PoseWire;
    target: PoseWire;
    T: number;
    label: number | string;
    anchor?: AnchorWire | null;
    fps?: number;
}

export interface SkeletonWire {
    joint_names: string[];
    parents: number[];
    ref_lengths: number[];
}

export interface MetadataWire {
    labels: string[];
    skeleton: SkeletonWire;
    T_max: number;
    model_version: string;
}

export interface InfillResponseWire {
    frames: PoseWire[];
    generation_ms: number;
    model_version: string;
    request: {
        T: number;
        label: string;
        label_id: number;
        anchor_frame: number | null;
        fps: number;
    };
}

export interface ValidationIssue {
    field: string;
    message: string;
}

/** One committed generation: the request that produced it and the full response. */
export interface HistoryEntry {
    id: number;
    summary: string;
    request: InfillRequestWire;
    response: InfillResponseWire;
    receivedAt: number;
}
