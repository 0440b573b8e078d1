/** Category labels fade in near the camera instead of cluttering the view.
 *
 * A label is visible when the camera sits within some fraction of the
 * scene diagonal from the label anchor. The fraction is a tunable, not
 * a constant, because what feels right depends on how dense the
 * embedding is.
 */

export interface LabelAnchor {
    text: string;
    position: [number, number, number];
}

export function sceneDiagonal(
    min: [number, number, number],
    max: [number, number, number],
): number {
    const dx = max[0] - min[0];
    const dy = max[1] - min[1];
    const dz = max[2] - min[2];
    return Math.sqrt(dx * dx + dy * dy + dz * dz);
}

export function visibleLabels(
    labels: LabelAnchor[],
    cameraPosition: [number, number, number],
    diagonal: number,
    factor = 0.35,
): LabelAnchor[] {
    const threshold = factor * diagonal;
    return labels.filter((label) => {
        const dx = label.position[0] - cameraPosition[0];
        const dy = label.position[1] - cameraPosition[1];
        const dz = label.position[2] - cameraPosition[2];
        return Math.sqrt(dx * dx + dy * dy + dz * dz) < threshold;
    });
}
