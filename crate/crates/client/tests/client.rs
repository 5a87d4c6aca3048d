use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use nelp_client::{Client, ClientError};
use nelp_core::api::{CurvesResponse, ErrorResponse, SCHEMA};

async fn stub() -> Client {
    let app = Router::new()
        .route(
            "/curves",
            get(|| async {
                Json(CurvesResponse {
                    schema: "nelp.annotation.v0".into(),
                    strategy: "rand".into(),
                    history: vec![],
                })
            }),
        )
        .route(
            "/labels",
            post(|| async {
                (
                    StatusCode::UNPROCESSABLE_ENTITY,
                    Json(ErrorResponse {
                        schema: SCHEMA.into(),
                        error: "boundary 6 out of range 1..5".into(),
                    }),
                )
            }),
        )
        .route("/status", get(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "boom") }));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Client::new(format!("http://{addr}/"))
}

#[tokio::test]
async fn rejects_unknown_schema() {
    let c = stub().await;
    assert!(matches!(c.curves().await, Err(ClientError::Schema(s)) if s == "nelp.annotation.v0"));
}

#[tokio::test]
async fn surfaces_server_reasons() {
    let c = stub().await;
    let e = c.submit(1, vec![6]).await.unwrap_err();
    assert_eq!(e.status(), Some(StatusCode::UNPROCESSABLE_ENTITY));
    assert_eq!(e.to_string(), "server returned 422 Unprocessable Entity: boundary 6 out of range 1..5");
    let e = c.status().await.unwrap_err();
    assert!(matches!(&e, ClientError::Status { reason, .. } if reason == "boom"));
}

#[tokio::test]
async fn unreachable_server_is_a_transport_error() {
    let c = Client::new("http://127.0.0.1:9");
    assert!(matches!(c.batch(1).await, Err(ClientError::Transport(_))));
    assert_eq!(c.base(), "http://127.0.0.1:9");
}
