/** Browser entry point: renderer, camera pair, HUD, and input wiring. */
import * as THREE from 'three';

import { ServiceClient } from './client.js';
import { TopView, unprojectToGround } from './drag.js';
import { MotionStage } from './scene.js';
import { ViewerSession } from './session.js';
import { PoseWire } from './types.js';

const SERVICE_URL = new URLSearchParams(location.search).get('service') ?? 'http://127.0.0.1:8080';

interface PoseLibrary {
    /** window first/last frames exported from the dataset */
    poses: Array<{ name: string; pose: PoseWire }>;
}

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node as T;
}

async function boot(): Promise<void> {
    const canvas = el<HTMLCanvasElement>('stage');
    const banner = el<HTMLDivElement>('banner');
    const provenance = el<HTMLDivElement>('provenance');
    const distance = el<HTMLDivElement>('anchor-distance');
    const historyList = el<HTMLUListElement>('history');
    const labelSelect = el<HTMLSelectElement>('label');
    const horizonInput = el<HTMLInputElement>('horizon');
    const anchorFrame = el<HTMLInputElement>('anchor-frame');
    const anchorToggle = el<HTMLInputElement>('anchor-enabled');
    const regenerateBtn = el<HTMLButtonElement>('regenerate');
    const playBtn = el<HTMLButtonElement>('play');
    const scrubber = el<HTMLInputElement>('scrubber');

    const session = new ViewerSession(new ServiceClient(SERVICE_URL));
    const meta = await session.loadMetadata();

    const library: PoseLibrary = await (await fetch('./poses.json')).json();
    if (library.poses.length < 2) throw new Error('pose library needs at least two entries');

    for (const name of meta.labels) {
        const opt = document.createElement('option');
        opt.value = name;
        opt.textContent = name;
        labelSelect.appendChild(opt);
    }
    horizonInput.max = String(meta.T_max);
    horizonInput.value = String(Math.min(32, meta.T_max));

    session.newDraft(
        library.poses[0].pose,
        library.poses[1].pose,
        Number(horizonInput.value),
        meta.labels[0],
    );

    // --- three.js stage -----------------------------------------------------
    const renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    renderer.setPixelRatio(devicePixelRatio);
    const scene = new THREE.Scene();
    scene.background = new THREE.Color(0x14161a);

    const grid = new THREE.GridHelper(10, 20, 0x3a3f47, 0x262a30);
    grid.rotation.x = Math.PI / 2; // ground is the z=0 plane
    scene.add(grid);

    const stage = new MotionStage(meta.skeleton);
    scene.add(stage.root);

    const persp = new THREE.PerspectiveCamera(45, 1, 0.01, 100);
    persp.up.set(0, 0, 1);
    persp.position.set(-2.5, -3.5, 2.2);

    const topHalfWidth = 3.0;
    const ortho = new THREE.OrthographicCamera(-1, 1, 1, -1, 0.01, 100);
    ortho.up.set(1, 0, 0); // screen-up = +x is rotated below to +y convention
    ortho.position.set(0, 0, 10);
    ortho.lookAt(0, 0, 0);
    // screen-right = +x, screen-up = +y
    ortho.up.set(0, 1, 0);
    ortho.lookAt(0, 0, 0);

    function layout(): { w: number; h: number; split: number } {
        const w = canvas.clientWidth;
        const h = canvas.clientHeight;
        renderer.setSize(w, h, false);
        return { w, h, split: Math.floor(w / 2) };
    }

    function topView(): TopView {
        const { w, h, split } = layout();
        return {
            centerX: ortho.position.x,
            centerY: ortho.position.y,
            halfWidth: topHalfWidth,
            pxWidth: w - split,
            pxHeight: h,
        };
    }

    function draw(): void {
        const { w, h, split } = layout();
        const frames = session.lastResponse ? session.lastResponse.frames : null;
        stage.showFrame(frames, session.cursor);
        if (session.draft) {
            stage.setKeyPoses(
                session.draft.start,
                session.draft.target,
                session.draft.anchor ? session.draft.anchor.pose : null,
            );
        }

        renderer.setScissorTest(true);

        persp.aspect = split / h;
        persp.updateProjectionMatrix();
        persp.lookAt(stageCenter());
        renderer.setViewport(0, 0, split, h);
        renderer.setScissor(0, 0, split, h);
        renderer.render(scene, persp);

        const tw = w - split;
        const halfH = topHalfWidth * (h / tw);
        ortho.left = -topHalfWidth;
        ortho.right = topHalfWidth;
        ortho.top = halfH;
        ortho.bottom = -halfH;
        ortho.updateProjectionMatrix();
        renderer.setViewport(split, 0, tw, h);
        renderer.setScissor(split, 0, tw, h);
        renderer.render(scene, ortho);
    }

    function stageCenter(): THREE.Vector3 {
        const draft = session.draft;
        if (!draft) return new THREE.Vector3();
        const a = draft.start.positions[0];
        const b = draft.target.positions[0];
        return new THREE.Vector3((a[0] + b[0]) / 2, (a[1] + b[1]) / 2, 0.8);
    }

    // --- playback ------------------------------------------------------------
    let playing = false;
    let lastTick = 0;
    function tick(now: number): void {
        if (playing && session.lastResponse) {
            const fps = session.lastResponse.request.fps || 30;
            if (now - lastTick > 1000 / fps) {
                const T = session.lastResponse.frames.length;
                session.setCursor(session.cursor >= T ? 1 : session.cursor + 1);
                lastTick = now;
            }
        }
        draw();
        requestAnimationFrame(tick);
    }

    // --- input ---------------------------------------------------------------
    let dragging = false;
    canvas.addEventListener('pointerdown', (ev) => {
        const { w, split } = { w: canvas.clientWidth, split: Math.floor(canvas.clientWidth / 2) };
        void w;
        if (ev.offsetX < split || !session.draft?.anchor) return;
        dragging = true;
        canvas.setPointerCapture(ev.pointerId);
    });
    canvas.addEventListener('pointermove', (ev) => {
        if (!dragging) return;
        const split = Math.floor(canvas.clientWidth / 2);
        const view = topView();
        const ground = unprojectToGround(view, ev.offsetX - split, ev.offsetY);
        session.dragAnchorTo(ground.x, ground.y);
    });
    canvas.addEventListener('pointerup', () => {
        dragging = false;
    });

    labelSelect.addEventListener('change', () => session.setLabel(labelSelect.value));
    horizonInput.addEventListener('change', () => session.setHorizon(Number(horizonInput.value)));
    anchorToggle.addEventListener('change', () => {
        if (anchorToggle.checked) {
            const frame = Number(anchorFrame.value);
            if (!session.anchorFromLastResponse(frame)) {
                // no response yet: seed the anchor from the pose library
                session.enableAnchor(frame, library.poses[0].pose);
            }
        } else {
            session.disableAnchor();
        }
    });
    anchorFrame.addEventListener('change', () => session.setAnchorFrame(Number(anchorFrame.value)));
    regenerateBtn.addEventListener('click', () => void session.regenerate());
    playBtn.addEventListener('click', () => {
        playing = !playing;
        playBtn.textContent = playing ? 'pause' : 'play';
    });
    scrubber.addEventListener('input', () => session.setCursor(Number(scrubber.value)));

    // --- HUD sync ------------------------------------------------------------
    session.subscribe(() => {
        regenerateBtn.disabled = !session.canRegenerate;
        banner.textContent =
            session.errorBanner ??
            session.validationIssues.map((i) => `${i.field}: ${i.message}`).join('; ');
        banner.style.display = banner.textContent ? 'block' : 'none';

        const d = session.anchorDistance();
        distance.style.display = d === null ? 'none' : 'block';
        if (d !== null) distance.textContent = `anchor offset ${d.toFixed(3)} m`;

        const p = session.provenance;
        provenance.textContent = p
            ? `model ${p.modelVersion} · ${p.generationMs.toFixed(1)} ms · run #${p.entryId}${p.replayed ? ' (replay)' : ''}`
            : 'no generation yet';

        if (session.lastResponse) {
            scrubber.max = String(session.lastResponse.frames.length);
            scrubber.value = String(session.cursor);
        }

        historyList.replaceChildren(
            ...session.history.map((entry) => {
                const li = document.createElement('li');
                const btn = document.createElement('button');
                btn.textContent = `#${entry.id} ${entry.summary}`;
                btn.addEventListener('click', () => session.replay(entry.id));
                li.appendChild(btn);
                return li;
            }),
        );
    });

    requestAnimationFrame(tick);
}

boot().catch((err) => {
    const banner = document.getElementById('banner');
    if (banner) {
        banner.textContent = String(err);
        (banner as HTMLElement).style.display = 'block';
    }
});
