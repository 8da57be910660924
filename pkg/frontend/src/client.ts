/** Thin fetch client for the inference service's JSON endpoints. */
import { InfillRequestWire, InfillResponseWire, MetadataWire } from './types.js';

export class ServiceError extends Error {
    status: number;
    detail: unknown;

    constructor(status: number, detail: unknown) {
        super(ServiceError.describe(status, detail));
        this.name = 'ServiceError';
        this.status = status;
        this.detail = detail;
    }

    /** Prefer the server's own message; fall back to the HTTP status. */
    static describe(status: number, detail: unknown): string {
        if (detail && typeof detail === 'object') {
            const d = detail as Record<string, unknown>;
            if (typeof d.message === 'string') return d.message;
            if (typeof d.code === 'string') return `${d.code} (HTTP ${status})`;
        }
        if (typeof detail === 'string' && detail.length > 0) return detail;
        return `service error (HTTP ${status})`;
    }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
    baseUrl: string;
    private fetchImpl: FetchLike;

    constructor(baseUrl: string, fetchImpl: FetchLike = fetch) {
        this.baseUrl = baseUrl.replace(/\/+$/, '');
        this.fetchImpl = fetchImpl;
    }

    private async request<T>(path: string, init?: RequestInit): Promise<T> {
        const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
        let body: unknown = null;
        try {
            body = await res.json();
        } catch {
            // non-JSON body; keep null
        }
        if (!res.ok) {
            const detail =
                body && typeof body === 'object' && 'detail' in (body as object)
                    ? (body as { detail: unknown }).detail
                    : body;
            throw new ServiceError(res.status, detail);
        }
        return body as T;
    }

    health(): Promise<{ status: string; model_loaded: boolean }> {
        return this.request('/healthz');
    }

    metadata(): Promise<MetadataWire> {
        return this.request('/v1/metadata');
    }

    infill(req: InfillRequestWire): Promise<InfillResponseWire> {
        return this.request('/v1/infill', {
            method: 'POST',
            headers: { 'content-type': 'application/json' },
            body: JSON.stringify(req),
        });
    }
}
