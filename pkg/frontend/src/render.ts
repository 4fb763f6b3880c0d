/** Presentation helpers. Metric badges are verbatim pass-throughs of the
 * response fields; layer choice for the error-map toggle reuses the cached
 * response instead of re-requesting. */

import type { ReconstructResponse } from "./api";

/** Badge text shows the response value unreformatted. */
export function psnrBadge(resp: ReconstructResponse): string {
  if (resp.psnr === undefined) return "";
  return `PSNR ${resp.psnr} dB`;
}

export function ssimBadge(resp: ReconstructResponse): string {
  if (resp.ssim === undefined) return "";
  return `SSIM ${resp.ssim}`;
}

/** Which base64 PNG to paint, honoring the error-map toggle. */
export function pickLayer(resp: ReconstructResponse, showError: boolean): string {
  if (showError && resp.error_png) return resp.error_png;
  return resp.png;
}

/** Integer display zoom: largest whole multiple that fits the panel, >= 1,
 * so model output pixels are shown unresampled. */
export function fitZoom(imgW: number, imgH: number, panelW: number, panelH: number): number {
  const z = Math.floor(Math.min(panelW / imgW, panelH / imgH));
  return Math.max(1, z);
}

export function pngDataUrl(b64: string): string {
  return `data:image/png;base64,${b64}`;
}

/** Paint a base64 PNG with nearest-neighbor scaling. */
export async function paint(
  canvas: HTMLCanvasElement, b64: string, zoom: number,
): Promise<void> {
  const img = new Image();
  await new Promise<void>((ok, fail) => {
    img.onload = () => ok();
    img.onerror = () => fail(new Error("png decode failed"));
    img.src = pngDataUrl(b64);
  });
  canvas.width = img.naturalWidth * zoom;
  canvas.height = img.naturalHeight * zoom;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d context unavailable");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
}
