/** Typed client for the reconstruction service. The UI never computes
 * pixels itself; everything shown as model output comes through here. */

export interface SliceInfo {
  slice_id: string;
  h: number;
  w: number;
  contrasts: string[];
}

export interface VolumeInfo {
  volume_id: string;
  slices: SliceInfo[];
}

export interface HealthInfo {
  status: string;
  model_loaded: boolean;
  checkpoint_hash: string | null;
  n_volumes: number;
  max_scale: number;
  cache: { size: number; hits: number; misses: number; skipped: number };
}

export interface ReconstructRequest {
  volume_id: string;
  slice_id: string;
  roi: [number, number, number, number]; // x0, y0, w, h in LR pixels
  scale: number;
  ref_mode: "HR" | "LR";
  compare: boolean;
  token: number;
}

/** psnr arrives as the JSON string "inf" for identical images. */
export interface ReconstructResponse {
  h: number;
  w: number;
  scale: number;
  s_exact: number;
  png: string;
  served_from: "fresh" | "cache";
  token: number;
  psnr?: number | "inf";
  ssim?: number;
  error_png?: string;
  error_vmax?: number;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`service ${status}: ${detail}`);
  }
}

async function parseOrThrow<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && body.detail) detail = JSON.stringify(body.detail);
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(res.status, detail);
  }
  return res.json() as Promise<T>;
}

export class ApiClient {
  constructor(private base: string = "") {}

  health(): Promise<HealthInfo> {
    return fetch(`${this.base}/api/health`).then((r) => parseOrThrow(r));
  }

  async volumes(): Promise<VolumeInfo[]> {
    const body = await fetch(`${this.base}/api/volumes`).then(
      (r) => parseOrThrow<{ volumes: VolumeInfo[] }>(r),
    );
    return body.volumes;
  }

  /** URL for the static slice views (lr needs a scale to define the grid). */
  sliceUrl(volumeId: string, sliceId: string, view: "lr" | "hr" | "ref", scale?: number): string {
    const q = view === "lr" ? `?view=lr&scale=${scale ?? 2}` : `?view=${view}`;
    return `${this.base}/api/volumes/${volumeId}/slices/${sliceId}${q}`;
  }

  reconstruct(req: ReconstructRequest): Promise<ReconstructResponse> {
    return fetch(`${this.base}/api/reconstruct`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    }).then((r) => parseOrThrow(r));
  }
}
