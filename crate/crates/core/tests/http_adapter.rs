use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use polypaug_core::inpaint::{
    inpaint, BackendDescriptor, HttpBackend, HttpBackendConfig, InpaintBackend, InpaintRequest, ToyBackend, Variant,
    WireRequest, WireResponse,
};
use polypaug_core::{BinaryMask, Error, RasterImage};

#[derive(Clone)]
struct Mock {
    calls: Arc<AtomicUsize>,
    fail_first: usize,
    status: StatusCode,
}

async fn handle(State(mock): State<Mock>, Json(body): Json<WireRequest>) -> Result<Json<WireResponse>, StatusCode> {
    let n = mock.calls.fetch_add(1, Ordering::SeqCst);
    if n < mock.fail_first {
        return Err(mock.status);
    }
    // serve the toy compositor behind the wire format
    let req = body.decode().map_err(|_| StatusCode::BAD_REQUEST)?;
    let variant = if req.surface_reference.is_some() { Variant::V2 } else { Variant::V1 };
    let img = ToyBackend::new(variant).generate(&req).map_err(|_| StatusCode::UNPROCESSABLE_ENTITY)?;
    let meta = serde_json::json!({ "variant": body.variant, "steps": body.sampling_steps });
    Ok(Json(WireResponse::from_image(&img, meta).unwrap()))
}

fn spawn(mock: Mock) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new().route("/inpaint", post(handle)).with_state(mock);
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn mock(fail_first: usize, status: StatusCode) -> (Mock, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    (
        Mock {
            calls: calls.clone(),
            fail_first,
            status,
        },
        calls,
    )
}

fn request() -> InpaintRequest {
    let bg = RasterImage::from_fn(24, 24, 3, |r, c, k| ((r + 2 * c + 3 * k) % 17) as f32 / 17.0).unwrap();
    let m2 = BinaryMask::from_fn(24, 24, |r, c| r.abs_diff(12) + c.abs_diff(12) <= 4);
    InpaintRequest::new(bg, m2.dilate(3), m2).with_seed(5)
}

fn backend(addr: SocketAddr, retries: u32) -> HttpBackend {
    let config = HttpBackendConfig {
        endpoint: format!("http://{addr}/inpaint"),
        timeout_secs: 10.0,
        retries,
        max_in_flight: 2,
    };
    HttpBackend::new(BackendDescriptor::v1_controlnet(), config).unwrap()
}

#[test]
fn wire_round_trip_preserves_request() {
    let req = request().with_surface(RasterImage::filled(5, 6, &[0.2, 0.4, 0.6]).unwrap());
    let wire = WireRequest::encode(&req, &BackendDescriptor::v2_controlnet()).unwrap();
    let text = serde_json::to_string(&wire).unwrap();
    let back: WireRequest = serde_json::from_str(&text).unwrap();
    let decoded = back.decode().unwrap();
    assert_eq!(decoded.inpaint_region, req.inpaint_region);
    assert_eq!(decoded.boundary_condition, req.boundary_condition);
    assert_eq!(decoded.seed, 5);
    assert_eq!(back.variant, Variant::V2);
    // 8-bit PNG transport
    for (a, b) in decoded.background.data().iter().zip(req.background.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
    assert_eq!(decoded.surface_reference.unwrap().dims(), (5, 6));
}

#[test]
fn generates_through_the_service() {
    let (m, calls) = mock(0, StatusCode::OK);
    let addr = spawn(m);
    let backend = backend(addr, 0);
    let req = request();
    let out = inpaint(&req, &backend).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    for (r, c) in req.inpaint_region.complement().foreground() {
        assert_eq!(out.pixel(r, c), req.background.pixel(r, c));
    }
}

#[test]
fn retries_server_errors() {
    let (m, calls) = mock(2, StatusCode::SERVICE_UNAVAILABLE);
    let addr = spawn(m);
    assert!(inpaint(&request(), &backend(addr, 2)).is_ok());
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (m, calls) = mock(usize::MAX, StatusCode::BAD_REQUEST);
    let addr = spawn(m);
    let err = inpaint(&request(), &backend(addr, 3)).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)));
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_endpoint_is_reported() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = inpaint(&request(), &backend(addr, 1)).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)));
}
