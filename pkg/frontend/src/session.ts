/** Viewer session state: metadata, the editable request draft, the last
 * response, and the edit history.
 *
 * The session never synthesizes motion itself; every frame it exposes for
 * display arrived in a service response, and the provenance tag identifies
 * which one. One request may be in flight at a time, and a response whose
 * draft was edited after submission is discarded as stale.
 */
import { ServiceClient, ServiceError } from './client.js';

/** The slice of the client the session depends on (mockable in tests). */
export type InfillBackend = Pick<ServiceClient, 'metadata' | 'infill'>;
import { distanceXY } from './drag.js';
import {
    HistoryEntry,
    InfillRequestWire,
    InfillResponseWire,
    MetadataWire,
    PoseWire,
    ValidationIssue,
} from './types.js';
import { validateRequest } from './validation.js';

export function clampCursor(t: number, T: number): number {
    return Math.min(Math.max(1, Math.round(t)), T);
}

function copyPose(pose: PoseWire): PoseWire {
    return {
        positions: pose.positions.map((row) => row.slice()),
        rotations: pose.rotations.map((row) => row.slice()),
    };
}

function copyRequest(req: InfillRequestWire): InfillRequestWire {
    return {
        start: copyPose(req.start),
        target: copyPose(req.target),
        T: req.T,
        label: req.label,
        fps: req.fps,
        anchor: req.anchor ? { frame: req.anchor.frame, pose: copyPose(req.anchor.pose) } : null,
    };
}

export interface Provenance {
    modelVersion: string;
    generationMs: number;
    entryId: number;
    replayed: boolean;
}

export type RegenerateOutcome =
    | { ok: true; entry: HistoryEntry }
    | { ok: false; reason: 'pending' | 'invalid' | 'stale' | 'server' | 'bad-response'; message: string };

export class ViewerSession {
    client: InfillBackend;
    metadata: MetadataWire | null = null;

    draft: InfillRequestWire | null = null;
    lastResponse: InfillResponseWire | null = null;
    provenance: Provenance | null = null;
    history: HistoryEntry[] = [];
    cursor = 1;

    errorBanner: string | null = null;
    validationIssues: ValidationIssue[] = [];

    private nextId = 1;
    private pending = false;
    private draftRevision = 0;
    private listeners: Array<() => void> = [];

    constructor(client: InfillBackend) {
        this.client = client;
    }

    subscribe(fn: () => void): () => void {
        this.listeners.push(fn);
        return () => {
            this.listeners = this.listeners.filter((l) => l !== fn);
        };
    }

    private emit(): void {
        for (const fn of this.listeners) fn();
    }

    async loadMetadata(): Promise<MetadataWire> {
        this.metadata = await this.client.metadata();
        this.emit();
        return this.metadata;
    }

    get jointCount(): number {
        return this.metadata ? this.metadata.skeleton.joint_names.length : 0;
    }

    get isPending(): boolean {
        return this.pending;
    }

    /** Regenerate is disabled while a request is in flight. */
    get canRegenerate(): boolean {
        return !this.pending && this.draft !== null && this.metadata !== null;
    }

    newDraft(start: PoseWire, target: PoseWire, T: number, label: number | string, fps = 30.0): void {
        this.draft = { start: copyPose(start), target: copyPose(target), T, label, fps, anchor: null };
        this.touchDraft();
    }

    private touchDraft(): void {
        this.draftRevision += 1;
        this.validationIssues = [];
        this.emit();
    }

    setLabel(label: number | string): void {
        if (!this.draft) return;
        this.draft.label = label;
        this.touchDraft();
    }

    setHorizon(T: number): void {
        if (!this.draft) return;
        this.draft.T = T;
        this.touchDraft();
    }

    /** Attach an interior anchor; the pose must byte-originate elsewhere
     * (a response frame or the pose library), never be synthesized here. */
    enableAnchor(frame: number, pose: PoseWire): void {
        if (!this.draft) return;
        this.draft.anchor = { frame, pose: copyPose(pose) };
        this.touchDraft();
    }

    /** Convenience: anchor at the last response's own frame k. */
    anchorFromLastResponse(frame: number): boolean {
        if (!this.draft || !this.lastResponse) return false;
        if (frame < 1 || frame > this.lastResponse.frames.length) return false;
        this.enableAnchor(frame, this.lastResponse.frames[frame - 1]);
        return true;
    }

    setAnchorFrame(frame: number): void {
        if (!this.draft?.anchor) return;
        this.draft.anchor.frame = frame;
        this.touchDraft();
    }

    disableAnchor(): void {
        if (!this.draft) return;
        this.draft.anchor = null;
        this.touchDraft();
    }

    /** Move the anchor root to ground-plane (x, y), translating the whole
     * pose by the same offset so bone lengths are untouched. */
    dragAnchorTo(x: number, y: number): void {
        const anchor = this.draft?.anchor;
        if (!anchor) return;
        const root = anchor.pose.positions[0];
        const dx = x - root[0];
        const dy = y - root[1];
        for (const row of anchor.pose.positions) {
            row[0] += dx;
            row[1] += dy;
        }
        this.touchDraft();
    }

    /** L2 distance on the ground plane between the requested anchor root and
     * the last generated root at the anchor frame; null when either side is
     * missing (nothing to compare yet). */
    anchorDistance(): number | null {
        const anchor = this.draft?.anchor;
        if (!anchor || !this.lastResponse) return null;
        const frames = this.lastResponse.frames;
        if (anchor.frame < 1 || anchor.frame > frames.length) return null;
        const want = anchor.pose.positions[0];
        const got = frames[anchor.frame - 1].positions[0];
        return distanceXY({ x: want[0], y: want[1] }, { x: got[0], y: got[1] });
    }

    setCursor(t: number): void {
        const T = this.lastResponse ? this.lastResponse.frames.length : 1;
        this.cursor = clampCursor(t, T);
        this.emit();
    }

    private summarize(req: InfillRequestWire): string {
        const anchor = req.anchor ? `anchor@${req.anchor.frame}` : 'no anchor';
        return `${req.label} T=${req.T} ${anchor}`;
    }

    /** Submit the draft. On success the response becomes the displayed motion
     * and joins the history; on any failure the draft is left untouched. */
    async regenerate(): Promise<RegenerateOutcome> {
        if (this.pending) {
            return { ok: false, reason: 'pending', message: 'a request is already in flight' };
        }
        if (!this.draft || !this.metadata) {
            return { ok: false, reason: 'invalid', message: 'no draft or metadata loaded' };
        }
        const issues = validateRequest(this.draft, this.metadata);
        if (issues.length > 0) {
            this.validationIssues = issues;
            this.emit();
            return {
                ok: false,
                reason: 'invalid',
                message: issues.map((i) => `${i.field}: ${i.message}`).join('; '),
            };
        }

        const body = copyRequest(this.draft);
        const revision = this.draftRevision;
        this.pending = true;
        this.errorBanner = null;
        this.emit();

        let response: InfillResponseWire;
        try {
            response = await this.client.infill(body);
        } catch (err) {
            this.pending = false;
            this.errorBanner = err instanceof ServiceError ? err.message : String(err);
            this.emit();
            return { ok: false, reason: 'server', message: this.errorBanner };
        }
        this.pending = false;

        if (this.draftRevision !== revision) {
            // the draft moved on while we waited; this response answers a
            // superseded request
            this.emit();
            return { ok: false, reason: 'stale', message: 'response discarded: draft was edited' };
        }

        if (!Array.isArray(response.frames) || response.frames.length !== body.T) {
            const got = Array.isArray(response.frames) ? response.frames.length : 'none';
            this.errorBanner = `response carried ${got} frames, expected T=${body.T}`;
            this.emit();
            return { ok: false, reason: 'bad-response', message: this.errorBanner };
        }

        const entry: HistoryEntry = {
            id: this.nextId++,
            summary: this.summarize(body),
            request: body,
            response,
            receivedAt: Date.now(),
        };
        this.history.push(entry);
        this.lastResponse = response;
        this.cursor = 1;
        this.provenance = {
            modelVersion: response.model_version,
            generationMs: response.generation_ms,
            entryId: entry.id,
            replayed: false,
        };
        this.emit();
        return { ok: true, entry };
    }

    /** Re-display a past result (A/B comparison); the draft is untouched. */
    replay(entryId: number): boolean {
        const entry = this.history.find((e) => e.id === entryId);
        if (!entry) return false;
        this.lastResponse = entry.response;
        this.cursor = 1;
        this.provenance = {
            modelVersion: entry.response.model_version,
            generationMs: entry.response.generation_ms,
            entryId: entry.id,
            replayed: true,
        };
        this.emit();
        return true;
    }
}
