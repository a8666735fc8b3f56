//! JSON over HTTP plus a server-sent event stream. Handlers only parse,
//! forward to the runtime and render; all state changes happen there.

use std::convert::Infallible;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use futures::Stream;
use haptiforge::layout::export::{export_cad, CadFormat};
use haptiforge::mapper::ContactEvent;
use haptiforge::session::{CalibrationResponse, SessionConfig};
use haptiforge::stimulator::{simulate, PulsePattern};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ServiceError;
use crate::runtime::{Calibration, DeviceState, Mutation, RuntimeHandle, ServiceEvent};

/// Simulations longer than this many ticks are refused.
pub const MAX_WAVEFORM_TICKS: u64 = 20_000_000;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

type Reply = Result<Response, ServiceError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    let text = if body.iter().all(|b| b.is_ascii_whitespace()) { &b"{}"[..] } else { &body[..] };
    serde_json::from_slice(text).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

fn state(s: Arc<DeviceState>) -> Reply {
    Ok(Json(&*s).into_response())
}

pub fn router(handle: RuntimeHandle) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/events", get(events))
        .route("/contact", post(contact))
        .route("/patterns", post(start_pattern))
        .route("/patterns/{channel}", delete(stop_channel))
        .route("/stop_all", post(stop_all))
        .route("/calibrate", post(calibrate))
        .route("/limits", post(lower_cap))
        .route("/session/start", post(session_start))
        .route("/session/advance", post(session_advance))
        .route("/session/rate", post(session_rate))
        .route("/session/end", post(session_end))
        .route("/session/csv", get(session_csv))
        .route("/session/surface", get(session_surface))
        .route("/layout", get(layout_json))
        .route("/layout.svg", get(layout_svg))
        .route("/schedule", get(schedule))
        .route("/waveform.csv", get(waveform_csv))
        .route("/waveform.svg", get(waveform_svg))
        .with_state(handle)
}

/// Serves until `shutdown` resolves.
pub async fn serve(listener: TcpListener, handle: RuntimeHandle, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(handle)).with_graceful_shutdown(shutdown).await
}

async fn get_state(State(h): State<RuntimeHandle>) -> Reply {
    state(h.snapshot())
}

async fn contact(State(h): State<RuntimeHandle>, body: Bytes) -> Reply {
    let event: ContactEvent = parse(&body)?;
    state(h.apply(Mutation::Contact(event)).await?)
}

async fn start_pattern(State(h): State<RuntimeHandle>, body: Bytes) -> Reply {
    let pattern: PulsePattern = parse(&body)?;
    state(h.apply(Mutation::StartPattern(pattern)).await?)
}

async fn stop_channel(State(h): State<RuntimeHandle>, Path(channel): Path<String>) -> Reply {
    let channel = channel
        .parse::<u8>()
        .map_err(|_| ServiceError::BadRequest(format!("channel {channel:?} is not a number 0-14")))?;
    state(h.apply(Mutation::StopChannel(channel)).await?)
}

async fn stop_all(State(h): State<RuntimeHandle>) -> Reply {
    state(h.apply(Mutation::StopAll).await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateBody {
    responses: Option<Vec<CalibrationResponse>>,
    amplitude_ma: Option<f64>,
}

async fn calibrate(State(h): State<RuntimeHandle>, body: Bytes) -> Reply {
    let body: CalibrateBody = parse(&body)?;
    let c = match (body.responses, body.amplitude_ma) {
        (Some(r), None) => Calibration::Responses(r),
        (None, Some(a)) => Calibration::Amplitude(a),
        _ => return Err(ServiceError::BadRequest("give exactly one of responses or amplitude_ma".into())),
    };
    state(h.apply(Mutation::Calibrate(c)).await?)
}

#[derive(Deserialize)]
struct CapBody {
    max_amplitude_ma: f64,
}

async fn lower_cap(State(h): State<RuntimeHandle>, body: Bytes) -> Reply {
    let body: CapBody = parse(&body)?;
    state(h.apply(Mutation::LowerCap(body.max_amplitude_ma)).await?)
}

async fn session_start(State(h): State<RuntimeHandle>, body: Bytes) -> Reply {
    let config: SessionConfig = parse(&body)?;
    state(h.apply(Mutation::SessionStart(config)).await?)
}

async fn session_advance(State(h): State<RuntimeHandle>) -> Reply {
    state(h.apply(Mutation::SessionAdvance).await?)
}

#[derive(Deserialize)]
struct RateBody {
    trial: usize,
    rating: u8,
}

async fn session_rate(State(h): State<RuntimeHandle>, body: Bytes) -> Reply {
    let body: RateBody = parse(&body)?;
    state(
        h.apply(Mutation::SessionRate {
            trial: body.trial,
            rating: body.rating,
        })
        .await?,
    )
}

async fn session_end(State(h): State<RuntimeHandle>) -> Reply {
    state(h.apply(Mutation::SessionEnd).await?)
}

async fn session_csv(State(h): State<RuntimeHandle>) -> Reply {
    let export = h.export_session(false).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], export.csv).into_response())
}

#[derive(Deserialize)]
struct SurfaceQuery {
    #[serde(default)]
    monotone: bool,
}

async fn session_surface(State(h): State<RuntimeHandle>, Query(q): Query<SurfaceQuery>) -> Reply {
    let export = h.export_session(q.monotone).await?;
    let surface = export.surface.ok_or(ServiceError::SessionIncomplete(export.records))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], surface.to_json()).into_response())
}

async fn layout_json(State(h): State<RuntimeHandle>) -> Reply {
    let layout = h.layout().ok_or(ServiceError::NoLayout)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], export_cad(layout, CadFormat::Json)).into_response())
}

async fn layout_svg(State(h): State<RuntimeHandle>) -> Reply {
    let layout = h.layout().ok_or(ServiceError::NoLayout)?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], export_cad(layout, CadFormat::Svg)).into_response())
}

async fn schedule(State(h): State<RuntimeHandle>) -> Reply {
    let s = h.snapshot();
    let schedule = s.plan.schedule(&s.limits)?;
    Ok(Json(serde_json::json!({
        "revision": s.revision,
        "frame_us": schedule.frame_ns as f64 / 1000.0,
        "duration_us": schedule.duration_ns as f64 / 1000.0,
        "events": schedule.events,
    }))
    .into_response())
}

#[derive(Deserialize)]
struct WaveformQuery {
    #[serde(default = "default_dt")]
    dt_us: f64,
    #[serde(default = "default_stride")]
    stride: usize,
}

fn default_dt() -> f64 {
    10.0
}

fn default_stride() -> usize {
    1
}

async fn trace_of(h: &RuntimeHandle, q: &WaveformQuery) -> Result<haptiforge::stimulator::WaveformTrace, ServiceError> {
    let s = h.snapshot();
    let schedule = s.plan.schedule(&s.limits)?;
    if !(q.dt_us.is_finite() && q.dt_us > 0.0) || q.stride == 0 {
        return Err(ServiceError::BadRequest("dt_us and stride must be positive".into()));
    }
    if schedule.duration_ns as f64 / (q.dt_us * 1000.0) > MAX_WAVEFORM_TICKS as f64 {
        return Err(ServiceError::BadRequest(format!("more than {MAX_WAVEFORM_TICKS} ticks; raise dt_us")));
    }
    let (events, patterns, limits, dt) = (schedule.events, s.plan.patterns(), s.limits, q.dt_us);
    tokio::task::spawn_blocking(move || simulate(&events, &patterns, &limits, dt))
        .await
        .map_err(|_| ServiceError::Unavailable)?
        .map_err(Into::into)
}

async fn waveform_csv(State(h): State<RuntimeHandle>, Query(q): Query<WaveformQuery>) -> Reply {
    let trace = trace_of(&h, &q).await?;
    let mut out = Vec::new();
    trace
        .write_csv(&mut out, q.stride)
        .map_err(|e| ServiceError::io("rendering waveform", std::io::Error::other(e.to_string())))?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], out).into_response())
}

async fn waveform_svg(State(h): State<RuntimeHandle>, Query(q): Query<WaveformQuery>) -> Reply {
    let trace = trace_of(&h, &q).await?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], trace.to_svg()).into_response())
}

fn state_event(s: &DeviceState) -> Event {
    Event::default()
        .event("state")
        .id(s.revision.to_string())
        .data(serde_json::to_string(s).expect("state serializes"))
}

/// The current snapshot, then every later revision in order. A client that
/// falls behind skips to the latest snapshot, so revisions only go up.
async fn events(State(h): State<RuntimeHandle>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = h.subscribe();
    let first = h.snapshot();
    let stream = futures::stream::unfold((rx, Some(first), 0u64, h), |(mut rx, first, mut last, h)| async move {
        if let Some(s) = first {
            return Some((Ok(state_event(&s)), (rx, None, s.revision, h)));
        }
        loop {
            let event = match rx.recv().await {
                Ok(ServiceEvent::State(s)) if s.revision > last => {
                    last = s.revision;
                    state_event(&s)
                }
                Ok(ServiceEvent::State(_)) => continue,
                Ok(ServiceEvent::Trial(t)) => Event::default().event("trial").data(serde_json::to_string(&t).expect("prompt serializes")),
                Err(RecvError::Lagged(_)) => {
                    let s = h.snapshot();
                    if s.revision <= last {
                        continue;
                    }
                    last = s.revision;
                    state_event(&s)
                }
                Err(RecvError::Closed) => return None,
            };
            return Some((Ok(event), (rx, None, last, h)));
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
