/** Ground-plane picking for the top-down view.
 *
 * The top view is orthographic, looking straight down the world z axis with
 * screen-right = +x and screen-up = +y, so unprojection is affine and exact:
 * no ray casting is needed and a dragged point lands on z = 0 by construction.
 */

export interface TopView {
    centerX: number;
    centerY: number;
    /** world meters spanned by half the viewport width */
    halfWidth: number;
    /** viewport size in pixels */
    pxWidth: number;
    pxHeight: number;
}

/** Map viewport pixel coordinates (origin top-left) to ground-plane (x, y). */
export function unprojectToGround(view: TopView, px: number, py: number): { x: number; y: number } {
    const ndcX = (2 * px) / view.pxWidth - 1;
    const ndcY = 1 - (2 * py) / view.pxHeight;
    const halfHeight = view.halfWidth * (view.pxHeight / view.pxWidth);
    return {
        x: view.centerX + ndcX * view.halfWidth,
        y: view.centerY + ndcY * halfHeight,
    };
}

/** Inverse of unprojectToGround; used to place overlays over world points. */
export function projectFromGround(view: TopView, x: number, y: number): { px: number; py: number } {
    const halfHeight = view.halfWidth * (view.pxHeight / view.pxWidth);
    const ndcX = (x - view.centerX) / view.halfWidth;
    const ndcY = (y - view.centerY) / halfHeight;
    return {
        px: ((ndcX + 1) / 2) * view.pxWidth,
        py: ((1 - ndcY) / 2) * view.pxHeight,
    };
}

export function distanceXY(a: { x: number; y: number }, b: { x: number; y: number }): number {
    return Math.hypot(a.x - b.x, a.y - b.y);
}
