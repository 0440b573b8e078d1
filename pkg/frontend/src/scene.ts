/** WebGL point cloud: every cell is one vertex of a single draw call.
 *
 * Per-point state lives in attribute buffers (position, category color,
 * quantized expression, selection flag); switching genes or selections
 * rewrites one buffer instead of rebuilding geometry. The expression
 * ramp is a 256x1 texture sampled in the vertex shader, so fragment
 * work stays a flat circular sprite.
 */

import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";

import { buildRampLut } from "./colors.js";
import { computeBounds, Bounds } from "./points.js";
import { columnMajorToRowMajor, pointerToNdc } from "./tools.js";

const VERTEX_SHADER = `
attribute vec3 catColor;
attribute float value;
attribute float selected;
uniform sampler2D uRamp;
uniform float uMode;
uniform float uSize;
uniform float uHasSelection;
varying vec3 vColor;

void main() {
    vec4 mvPosition = modelViewMatrix * vec4(position, 1.0);
    gl_Position = projectionMatrix * mvPosition;
    vec3 base = uMode < 0.5 ? catColor : texture2D(uRamp, vec2(value, 0.5)).rgb;
    float emphasis = mix(1.0, selected, uHasSelection);
    vColor = base * mix(1.0, 0.25 + 0.75 * emphasis, uHasSelection);
    float grow = mix(1.0, mix(1.0, 1.5, selected), uHasSelection);
    gl_PointSize = max(uSize * grow * (120.0 / -mvPosition.z), 1.0);
}
`;

const FRAGMENT_SHADER = `
varying vec3 vColor;

void main() {
    vec2 offset = gl_PointCoord - vec2(0.5);
    if (dot(offset, offset) > 0.25) discard;
    gl_FragColor = vec4(vColor, 1.0);
}
`;

function rampTexture(): THREE.DataTexture {
    const lut = buildRampLut(256);
    const rgba = new Uint8Array(256 * 4);
    for (let i = 0; i < 256; i++) {
        rgba[i * 4] = Math.round(lut[i * 3] * 255);
        rgba[i * 4 + 1] = Math.round(lut[i * 3 + 1] * 255);
        rgba[i * 4 + 2] = Math.round(lut[i * 3 + 2] * 255);
        rgba[i * 4 + 3] = 255;
    }
    const texture = new THREE.DataTexture(rgba, 256, 1, THREE.RGBAFormat);
    texture.minFilter = THREE.LinearFilter;
    texture.magFilter = THREE.LinearFilter;
    texture.needsUpdate = true;
    return texture;
}

export class PointCloudScene {
    readonly nPoints: number;
    readonly bounds: Bounds;
    onFrame?: (cameraPosition: [number, number, number]) => void;

    private renderer: THREE.WebGLRenderer;
    private scene: THREE.Scene;
    private camera: THREE.PerspectiveCamera;
    private controls: OrbitControls;
    private geometry: THREE.BufferGeometry;
    private material: THREE.ShaderMaterial;
    private selectedAttr: Float32Array;
    private projected = new THREE.Vector3();

    constructor(private container: HTMLElement, positions: Float32Array) {
        this.nPoints = positions.length / 3;
        this.bounds = computeBounds(positions);

        this.geometry = new THREE.BufferGeometry();
        this.geometry.setAttribute("position", new THREE.BufferAttribute(positions, 3));
        this.geometry.setAttribute(
            "catColor",
            new THREE.BufferAttribute(new Float32Array(this.nPoints * 3).fill(0.6), 3),
        );
        const values = new THREE.Uint16BufferAttribute(new Uint16Array(this.nPoints), 1);
        values.normalized = true;
        this.geometry.setAttribute("value", values);
        this.selectedAttr = new Float32Array(this.nPoints);
        this.geometry.setAttribute(
            "selected",
            new THREE.BufferAttribute(this.selectedAttr, 1),
        );

        this.material = new THREE.ShaderMaterial({
            vertexShader: VERTEX_SHADER,
            fragmentShader: FRAGMENT_SHADER,
            uniforms: {
                uRamp: { value: rampTexture() },
                uMode: { value: 0.0 },
                uSize: { value: 2.5 },
                uHasSelection: { value: 0.0 },
            },
        });

        this.scene = new THREE.Scene();
        this.scene.background = new THREE.Color(0x0b0d12);
        this.scene.add(new THREE.Points(this.geometry, this.material));

        const diagonal = this.diagonal() || 1;
        this.camera = new THREE.PerspectiveCamera(
            50,
            1,
            diagonal / 1000,
            diagonal * 20,
        );
        const center = this.center();
        this.camera.position.set(center[0], center[1], center[2] + diagonal * 1.4);

        this.renderer = new THREE.WebGLRenderer({ antialias: true });
        this.renderer.setPixelRatio(window.devicePixelRatio);
        container.appendChild(this.renderer.domElement);

        this.controls = new OrbitControls(this.camera, this.renderer.domElement);
        this.controls.target.set(center[0], center[1], center[2]);
        this.controls.update();

        this.resize();
        window.addEventListener("resize", () => this.resize());
    }

    start(): void {
        this.renderer.setAnimationLoop(() => {
            this.controls.update();
            this.renderer.render(this.scene, this.camera);
            if (this.onFrame) {
                const p = this.camera.position;
                this.onFrame([p.x, p.y, p.z]);
            }
        });
    }

    dispose(): void {
        this.renderer.setAnimationLoop(null);
        this.renderer.dispose();
        this.geometry.dispose();
        this.material.dispose();
    }

    resize(): void {
        const width = this.container.clientWidth || 1;
        const height = this.container.clientHeight || 1;
        this.camera.aspect = width / height;
        this.camera.updateProjectionMatrix();
        this.renderer.setSize(width, height);
    }

    center(): [number, number, number] {
        const { min, max } = this.bounds;
        return [(min[0] + max[0]) / 2, (min[1] + max[1]) / 2, (min[2] + max[2]) / 2];
    }

    diagonal(): number {
        const { min, max } = this.bounds;
        const dx = max[0] - min[0];
        const dy = max[1] - min[1];
        const dz = max[2] - min[2];
        return Math.sqrt(dx * dx + dy * dy + dz * dz);
    }

    setMode(mode: "metadata" | "expression"): void {
        this.material.uniforms.uMode.value = mode === "expression" ? 1.0 : 0.0;
    }

    setCategoryColors(colors: Float32Array): void {
        const attr = this.geometry.getAttribute("catColor") as THREE.BufferAttribute;
        (attr.array as Float32Array).set(colors);
        attr.needsUpdate = true;
    }

    setExpression(values: Uint16Array): void {
        const attr = this.geometry.getAttribute("value") as THREE.BufferAttribute;
        (attr.array as Uint16Array).set(values);
        attr.needsUpdate = true;
    }

    setSelection(indices: Iterable<number>): void {
        this.selectedAttr.fill(0);
        let any = false;
        for (const i of indices) {
            this.selectedAttr[i] = 1;
            any = true;
        }
        this.material.uniforms.uHasSelection.value = any ? 1.0 : 0.0;
        const attr = this.geometry.getAttribute("selected") as THREE.BufferAttribute;
        attr.needsUpdate = true;
    }

    /** World-to-clip matrix flattened the way the selection API expects. */
    viewTransformRowMajor(): number[] {
        this.camera.updateMatrixWorld(true);
        const m = new THREE.Matrix4();
        m.multiplyMatrices(this.camera.projectionMatrix, this.camera.matrixWorldInverse);
        return columnMajorToRowMajor(m.elements);
    }

    screenToNdc(clientX: number, clientY: number): [number, number] {
        const rect = this.renderer.domElement.getBoundingClientRect();
        return pointerToNdc(clientX - rect.left, clientY - rect.top, rect.width, rect.height);
    }

    /** Camera orbiting is suspended while a selection gesture is active. */
    setOrbitEnabled(enabled: boolean): void {
        this.controls.enabled = enabled;
    }

    /** Nearest point to the pointer ray, or null when nothing is close. */
    pickNearest(ndc: [number, number]): { index: number; position: [number, number, number] } | null {
        const raycaster = new THREE.Raycaster();
        raycaster.setFromCamera(new THREE.Vector2(ndc[0], ndc[1]), this.camera);
        const origin = raycaster.ray.origin;
        const dir = raycaster.ray.direction;
        const positions = this.geometry.getAttribute("position").array as Float32Array;
        const threshold = (this.diagonal() || 1) / 50;
        let best = -1;
        let bestDist = threshold * threshold;
        for (let i = 0; i < this.nPoints; i++) {
            const px = positions[i * 3] - origin.x;
            const py = positions[i * 3 + 1] - origin.y;
            const pz = positions[i * 3 + 2] - origin.z;
            const along = px * dir.x + py * dir.y + pz * dir.z;
            if (along < 0) continue;
            const dx = px - along * dir.x;
            const dy = py - along * dir.y;
            const dz = pz - along * dir.z;
            const d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < bestDist) {
                bestDist = d2;
                best = i;
            }
        }
        if (best < 0) {
            return null;
        }
        return {
            index: best,
            position: [
                positions[best * 3],
                positions[best * 3 + 1],
                positions[best * 3 + 2],
            ],
        };
    }

    /** Project a world point to CSS pixels; null when behind the camera. */
    projectToScreen(position: [number, number, number]): [number, number] | null {
        this.projected.set(position[0], position[1], position[2]);
        this.projected.project(this.camera);
        if (this.projected.z < -1 || this.projected.z > 1) {
            return null;
        }
        const rect = this.renderer.domElement.getBoundingClientRect();
        return [
            ((this.projected.x + 1) / 2) * rect.width,
            ((1 - this.projected.y) / 2) * rect.height,
        ];
    }

    domElement(): HTMLElement {
        return this.renderer.domElement;
    }
}
