/** Typed client for the storyboard service. Every mutation returns the
 * full project JSON, so callers can replace their snapshot wholesale. */

import type {
  ApiErrorPayload,
  FramePrompt,
  FrameRecord,
  JobState,
  Project,
  ProjectSummary,
  PromptView,
  StyleParameters,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly payload: ApiErrorPayload;

  constructor(status: number, payload: ApiErrorPayload) {
    super(payload.human_message);
    this.name = "ApiError";
    this.status = status;
    this.payload = payload;
  }

  get machineCode(): string {
    return this.payload.machine_code;
  }

  get retryable(): boolean {
    return this.payload.retryable;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

interface ProjectResponse {
  project: Project;
  frame?: FrameRecord;
  frames?: FrameRecord[];
  style?: StyleParameters | null;
}

async function errorFrom(response: Response): Promise<ApiError> {
  let payload: ApiErrorPayload = {
    machine_code: "internal-error",
    human_message: `request failed with HTTP ${response.status}`,
    retryable: false,
  };
  try {
    const body = (await response.json()) as { error?: ApiErrorPayload };
    if (body && body.error && typeof body.error.machine_code === "string") {
      payload = body.error;
    }
  } catch {
    // Non-JSON error body; keep the generic payload.
  }
  return new ApiError(response.status, payload);
}

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      throw await errorFrom(response);
    }
    return (await response.json()) as T;
  }

  createProject(narrative: string, frameCount?: number): Promise<ProjectResponse> {
    const body: Record<string, unknown> = { narrative };
    if (frameCount !== undefined) {
      body.frame_count = frameCount;
    }
    return this.request("POST", "/projects", body);
  }

  getProject(projectId: string): Promise<ProjectResponse> {
    return this.request("GET", `/projects/${projectId}`);
  }

  async listProjects(): Promise<ProjectSummary[]> {
    const body = await this.request<{ projects: ProjectSummary[] }>("GET", "/projects");
    return body.projects;
  }

  generateStyle(projectId: string): Promise<ProjectResponse> {
    return this.request("POST", `/projects/${projectId}/style:generate`);
  }

  regenerateStyle(projectId: string): Promise<ProjectResponse> {
    return this.request("POST", `/projects/${projectId}/style:regenerate`);
  }

  resetStyle(projectId: string): Promise<ProjectResponse> {
    return this.request("POST", `/projects/${projectId}/style:reset`);
  }

  putStyle(projectId: string, style: StyleParameters): Promise<ProjectResponse> {
    return this.request("PUT", `/projects/${projectId}/style`, style);
  }

  resubmit(projectId: string): Promise<ProjectResponse> {
    return this.request("POST", `/projects/${projectId}/resubmit`);
  }

  startResubmitJob(projectId: string): Promise<{ job_id: string; status: string }> {
    return this.request("POST", `/projects/${projectId}/resubmit?async=1`);
  }

  jobStatus(jobId: string): Promise<JobState> {
    return this.request("GET", `/jobs/${jobId}`);
  }

  /** Poll a job until it leaves "running"; resolves the final job state,
   * rejects when the job failed or the attempt budget runs out. */
  async pollJob(jobId: string, intervalMs = 1000, maxAttempts = 120): Promise<JobState> {
    for (let attempt = 0; attempt < maxAttempts; attempt += 1) {
      const job = await this.jobStatus(jobId);
      if (job.status === "done") {
        return job;
      }
      if (job.status === "failed") {
        throw new ApiError(502, job.error ?? {
          machine_code: "internal-error",
          human_message: "job failed",
          retryable: false,
        });
      }
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
    throw new ApiError(504, {
      machine_code: "job-timeout",
      human_message: `job ${jobId} still running after ${maxAttempts} polls`,
      retryable: true,
    });
  }

  regenerateFrame(projectId: string, index: number): Promise<ProjectResponse> {
    return this.request("POST", `/projects/${projectId}/frames/${index}:regenerate`);
  }

  refreshStale(projectId: string): Promise<ProjectResponse> {
    return this.request("POST", `/projects/${projectId}/frames:refresh-stale`);
  }

  putFramePrompt(
    projectId: string,
    index: number,
    view: PromptView,
    body: Partial<FramePrompt> | string,
    render: boolean,
  ): Promise<ProjectResponse> {
    return this.request("PUT", `/projects/${projectId}/frames/${index}/prompt`, {
      view,
      body,
      render,
    });
  }

  putStory(projectId: string, narrative: string): Promise<ProjectResponse> {
    return this.request("PUT", `/projects/${projectId}/story`, { narrative });
  }

  putFrameCount(projectId: string, frameCount: number): Promise<ProjectResponse> {
    return this.request("PUT", `/projects/${projectId}/frame-count`, { frame_count: frameCount });
  }

  frameImageUrl(projectId: string, index: number, imageRef: string | null): string {
    // The ref doubles as a cache-buster: a new render means a new URL.
    const suffix = imageRef ? `?v=${imageRef.slice(0, 12)}` : "";
    return `${this.baseUrl}/projects/${projectId}/frames/${index}/image${suffix}`;
  }

  /** The image endpoint's ETag is the content hash, so this is the cheap
   * way to ask "did this frame's pixels change?". */
  async frameImageEtag(projectId: string, index: number): Promise<string> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/projects/${projectId}/frames/${index}/image`,
      { method: "GET" },
    );
    if (!response.ok) {
      throw await errorFrom(response);
    }
    return response.headers.get("etag") ?? "";
  }

  async downloadExport(projectId: string, formats: string[]): Promise<Blob> {
    const query = encodeURIComponent(formats.join(","));
    const response = await this.fetchImpl(
      `${this.baseUrl}/projects/${projectId}/export?formats=${query}`,
      { method: "GET" },
    );
    if (!response.ok) {
      throw await errorFrom(response);
    }
    return response.blob();
  }

  async health(): Promise<{ status: string; backends: Record<string, { state: string; detail: string }> }> {
    return this.request("GET", "/healthz");
  }
}
