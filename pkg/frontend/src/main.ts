/** DOM wiring: one ViewerState owner, one RequestScheduler, all pixels from
 * /api/reconstruct. Slider input debounces; ROI drags fire on release. */

import { ApiClient, type ReconstructResponse, type VolumeInfo } from "./api";
import { RequestScheduler } from "./scheduler";
import {
  clampRoi, clampScale, dragToRoi, effectiveRoi, initialState, lrDimsFor,
  type ViewerState,
} from "./state";
import { fitZoom, paint, pickLayer, psnrBadge, ssimBadge } from "./render";

const PANEL = 512; // px budget for each canvas

function el<T extends HTMLElement>(id: string): T {
  const e = document.getElementById(id);
  if (!e) throw new Error(`missing #${id}`);
  return e as T;
}

async function boot() {
  const api = new ApiClient("");
  const state: ViewerState = initialState();
  let volumes: VolumeInfo[] = [];
  let hrDims: [number, number] | null = null;

  const volumeSel = el<HTMLSelectElement>("volume");
  const sliceSel = el<HTMLSelectElement>("slice");
  const slider = el<HTMLInputElement>("scale");
  const scaleOut = el<HTMLSpanElement>("scale-value");
  const refToggle = el<HTMLInputElement>("ref-lr");
  const compareToggle = el<HTMLInputElement>("compare");
  const errorToggle = el<HTMLInputElement>("show-error");
  const banner = el<HTMLDivElement>("banner");
  const srCanvas = el<HTMLCanvasElement>("sr-canvas");
  const lrImg = el<HTMLImageElement>("lr-view");
  const badge = el<HTMLSpanElement>("psnr-badge");
  const ssim = el<HTMLSpanElement>("ssim-badge");
  const meta = el<HTMLSpanElement>("meta");
  const roiLabel = el<HTMLSpanElement>("roi-label");

  function setBanner(msg: string | null) {
    state.banner = msg;
    banner.textContent = msg ?? "";
    banner.style.display = msg ? "block" : "none";
  }

  async function renderResponse(resp: ReconstructResponse) {
    state.lastResponse = resp;
    const zoom = fitZoom(resp.w, resp.h, PANEL, PANEL);
    await paint(srCanvas, pickLayer(resp, state.showError), zoom);
    badge.textContent = psnrBadge(resp);
    ssim.textContent = ssimBadge(resp);
    meta.textContent =
      `${resp.w}×${resp.h} at x${resp.scale} (exact ${resp.s_exact}), ` +
      `${resp.served_from}`;
  }

  /** Repaint from the cached response (error-map toggle: no re-request). */
  async function repaintCached() {
    if (state.lastResponse) await renderResponse(state.lastResponse);
  }

  const scheduler = new RequestScheduler<ReconstructResponse>({
    send: (seq) => {
      const roi = effectiveRoi(state);
      if (!state.volumeId || !state.sliceId || !roi) {
        return Promise.reject(new Error("no slice selected"));
      }
      return api.reconstruct({
        volume_id: state.volumeId,
        slice_id: state.sliceId,
        roi,
        scale: state.scale,
        ref_mode: state.refMode,
        compare: state.compare,
        token: seq,
      });
    },
    apply: (_seq, resp) => {
      setBanner(null);
      void renderResponse(resp);
    },
    onError: (_seq, err) => {
      // keep the last good image; just surface the failure
      setBanner(`request failed: ${err instanceof Error ? err.message : err}`);
    },
  });

  function syncLrView() {
    if (!state.volumeId || !state.sliceId) return;
    lrImg.src = api.sliceUrl(state.volumeId, state.sliceId, "lr", state.scale);
    if (state.lrDims) {
      // display at the same integer zoom the drag math assumes
      const z = fitZoom(state.lrDims[1], state.lrDims[0], PANEL, PANEL);
      lrImg.style.width = `${state.lrDims[1] * z}px`;
      lrImg.style.height = `${state.lrDims[0] * z}px`;
    }
  }

  function setScale(s: number) {
    state.scale = clampScale(s, state.scaleBounds);
    scaleOut.textContent = `x${state.scale.toFixed(2)}`;
    if (hrDims) {
      state.lrDims = lrDimsFor(hrDims[0], hrDims[1], state.scale);
      // the LR grid changed under the selection; re-clamp or drop it
      state.roi = state.roi ? clampRoi(state.roi, state.lrDims) : null;
      roiLabel.textContent = state.roi
        ? `roi ${state.roi.w}×${state.roi.h} at (${state.roi.x0}, ${state.roi.y0})`
        : "full slice";
    }
    syncLrView();
  }

  function selectSlice(volumeId: string, sliceId: string) {
    const vol = volumes.find((v) => v.volume_id === volumeId);
    const row = vol?.slices.find((s) => s.slice_id === sliceId);
    if (!vol || !row) return;
    state.volumeId = volumeId;
    state.sliceId = sliceId;
    hrDims = [row.h, row.w];
    state.roi = null;
    setScale(state.scale);
    scheduler.requestNow();
  }

  slider.addEventListener("input", () => {
    setScale(parseFloat(slider.value));
    scheduler.request(); // debounced; stale responses never rendered
  });
  refToggle.addEventListener("change", () => {
    state.refMode = refToggle.checked ? "LR" : "HR";
    scheduler.requestNow();
  });
  compareToggle.addEventListener("change", () => {
    state.compare = compareToggle.checked;
    scheduler.requestNow();
  });
  errorToggle.addEventListener("change", () => {
    state.showError = errorToggle.checked;
    void repaintCached(); // client cache contract: no network
  });

  // ROI selection: drag on the LR view, request on release
  let drag: [number, number] | null = null;
  const lrZoom = () => (state.lrDims ? fitZoom(state.lrDims[1], state.lrDims[0], PANEL, PANEL) : 1);
  lrImg.addEventListener("mousedown", (e) => {
    const r = lrImg.getBoundingClientRect();
    drag = [e.clientX - r.left, e.clientY - r.top];
    e.preventDefault();
  });
  lrImg.addEventListener("mouseup", (e) => {
    if (!drag || !state.lrDims) return;
    const r = lrImg.getBoundingClientRect();
    const sel = dragToRoi(drag[0], drag[1], e.clientX - r.left, e.clientY - r.top, lrZoom());
    drag = null;
    const clamped = clampRoi(sel, state.lrDims);
    if (!clamped) return; // degenerate selections are ignored
    state.roi = clamped;
    roiLabel.textContent = `roi ${clamped.w}×${clamped.h} at (${clamped.x0}, ${clamped.y0})`;
    scheduler.requestNow();
  });
  el<HTMLButtonElement>("clear-roi").addEventListener("click", () => {
    state.roi = null;
    roiLabel.textContent = "full slice";
    scheduler.requestNow();
  });

  volumeSel.addEventListener("change", () => {
    const vol = volumes.find((v) => v.volume_id === volumeSel.value);
    if (!vol) return;
    sliceSel.innerHTML = "";
    for (const s of vol.slices) {
      const opt = document.createElement("option");
      opt.value = s.slice_id;
      opt.textContent = s.slice_id;
      sliceSel.appendChild(opt);
    }
    selectSlice(volumeSel.value, vol.slices[0].slice_id);
  });
  sliceSel.addEventListener("change", () => selectSlice(volumeSel.value, sliceSel.value));

  try {
    const health = await api.health();
    state.scaleBounds = [1.0, health.max_scale];
    slider.min = "1.0";
    slider.max = String(health.max_scale);
    volumes = await api.volumes();
    for (const v of volumes) {
      const opt = document.createElement("option");
      opt.value = v.volume_id;
      opt.textContent = v.volume_id;
      volumeSel.appendChild(opt);
    }
    if (volumes.length) {
      volumeSel.value = volumes[0].volume_id;
      volumeSel.dispatchEvent(new Event("change"));
    } else {
      setBanner("service has no volumes loaded");
    }
  } catch (err) {
    setBanner(`service unreachable: ${err instanceof Error ? err.message : err}`);
  }
}

void boot();
