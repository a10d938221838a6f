mod common;

use std::collections::BTreeSet;

use serde_json::{json, Value};

use common::{read_sse, server, ServerOptions};
use quizread_core::fixtures;

fn assert_api_error(status: u16, body: &Value, expected_status: u16, code: &str) {
    assert_eq!(status, expected_status, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert_eq!(body["http_status"], expected_status);
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[tokio::test]
async fn upload_is_idempotent_by_content() {
    let s = server(ServerOptions::default()).await;
    let (status, first) = s.upload(fixtures::marked_pdf(3), "three.pdf").await;
    assert_eq!(status, 201);
    assert_eq!(first["page_count"], 3);
    assert_eq!(first["filename"], "three.pdf");
    let (status, again) = s.upload(fixtures::marked_pdf(3), "renamed.pdf").await;
    assert_eq!(status, 200);
    assert_eq!(again["document_id"], first["document_id"]);
    let (status, other) = s.upload(fixtures::marked_pdf(2), "two.pdf").await;
    assert_eq!(status, 201);
    assert_ne!(other["document_id"], first["document_id"]);

    let id = first["document_id"].as_str().unwrap();
    let (status, summary) = s.get_json(&format!("/api/documents/{id}")).await;
    assert_eq!(status, 200);
    assert_eq!(summary, first);
    // documents are also addressable by content hash
    let hash = first["content_hash"].as_str().unwrap();
    let (status, by_hash) = s.get_json(&format!("/api/documents/{hash}")).await;
    assert_eq!((status, &by_hash["document_id"]), (200, &first["document_id"]));
}

#[tokio::test]
async fn upload_error_paths() {
    let s = server(ServerOptions {
        max_upload_bytes: 4096,
        ..ServerOptions::default()
    })
    .await;
    // a zip container, as a .docx would be
    let docx = b"PK\x03\x04\x14\x00\x06\x00word/document.xml".to_vec();
    let (status, body) = s
        .upload_as(docx, "notes.docx", "application/vnd.openxmlformats-officedocument.wordprocessingml.document")
        .await;
    assert_api_error(status, &body, 415, "unsupported_media_type");

    let resp = s.http.post(s.url("/api/documents")).body("%PDF-1.4").send().await.unwrap();
    let status = resp.status().as_u16();
    assert_api_error(status, &resp.json().await.unwrap(), 415, "unsupported_media_type");

    let (status, body) = s.upload(fixtures::encrypted_pdf("pw"), "locked.pdf").await;
    assert_api_error(status, &body, 422, "encrypted_document");

    let (status, body) = s.upload(fixtures::text_pdf(&[]), "empty.pdf").await;
    assert_api_error(status, &body, 422, "empty_document");

    let (status, body) = s.upload(b"%PDF-1.7\ngarbage".to_vec(), "broken.pdf").await;
    assert_api_error(status, &body, 422, "unreadable_document");

    let mut big = fixtures::marked_pdf(1);
    big.resize(5000, b' ');
    let (status, body) = s.upload(big, "big.pdf").await;
    assert_api_error(status, &body, 413, "payload_too_large");

    let huge = vec![b'%'; 200_000];
    let (status, body) = s.upload(huge, "huge.pdf").await;
    assert_api_error(status, &body, 413, "payload_too_large");
}

#[tokio::test]
async fn file_is_returned_byte_for_byte() {
    let s = server(ServerOptions::default()).await;
    let bytes = fixtures::marked_pdf(2);
    let (_, doc) = s.upload(bytes.clone(), "two.pdf").await;
    let id = doc["document_id"].as_str().unwrap();

    let resp = s.http.get(s.url(&format!("/api/documents/{id}/file"))).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["content-type"], "application/pdf");
    assert_eq!(resp.bytes().await.unwrap().to_vec(), bytes);

    let resp = s.http.head(s.url(&format!("/api/documents/{id}/file"))).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["content-length"], bytes.len().to_string().as_str());
    assert!(resp.bytes().await.unwrap().is_empty());

    let (status, body) = s.get_json("/api/documents/nope/file").await;
    assert_api_error(status, &body, 404, "document_not_found");
}

#[tokio::test]
async fn job_request_validation() {
    let s = server(ServerOptions::default()).await;
    let (_, doc) = s.upload(fixtures::marked_pdf(3), "three.pdf").await;
    let id = doc["document_id"].as_str().unwrap();

    let (status, body) = s.start_job("missing", json!({"kind": "comprehension", "questions_per_page": 4})).await;
    assert_api_error(status, &body, 404, "document_not_found");

    for (body, code) in [
        (json!({"kind": "comprehension", "questions_per_page": 11}), "count_out_of_range"),
        (json!({"kind": "comprehension", "questions_per_page": 0}), "count_out_of_range"),
        (json!({"kind": "comprehension", "questions_per_page": -4}), "count_out_of_range"),
        (json!({"kind": "summary", "questions_per_page": 3}), "unsupported_kind"),
        (json!({"kind": "limerick", "questions_per_page": 3}), "unsupported_kind"),
        (json!({"kind": "analysis", "questions_per_page": 3, "pages": [3]}), "page_out_of_range"),
        (json!({"kind": "analysis", "questions_per_page": 3, "pages": []}), "empty_page_range"),
        (json!({"kind": "analysis", "questions_per_page": "three"}), "invalid_request"),
        (json!({"kind": "analysis", "questions_per_page": 3, "api_key": "sk-x"}), "invalid_request"),
    ] {
        let (status, resp) = s.start_job(id, body.clone()).await;
        assert_api_error(status, &resp, 400, code);
    }
    let resp = s
        .http
        .post(s.url(&format!("/api/documents/{id}/jobs")))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    let status = resp.status().as_u16();
    assert_api_error(status, &resp.json().await.unwrap(), 400, "invalid_request");

    let (status, body) = s.get_json("/api/jobs/unknown/events").await;
    assert_api_error(status, &body, 404, "job_not_found");
    let (status, body) = s.get_json("/api/no/such/route").await;
    assert_api_error(status, &body, 404, "not_found");
}

#[tokio::test]
async fn second_job_conflicts_while_first_runs() {
    let s = server(ServerOptions {
        mock: "delay_ms=150".into(),
        parallel: 1,
        ..ServerOptions::default()
    })
    .await;
    let (_, doc) = s.upload(fixtures::marked_pdf(3), "three.pdf").await;
    let id = doc["document_id"].as_str().unwrap();
    let (status, started) = s.start_job(id, json!({"kind": "comprehension", "questions_per_page": 2})).await;
    assert_eq!(status, 202);
    let job = started["job_id"].as_str().unwrap().to_string();

    let (status, body) = s.start_job(id, json!({"kind": "analysis", "questions_per_page": 2})).await;
    assert_api_error(status, &body, 409, "job_already_running");
    let (status, body) = s
        .post_json(&format!("/api/documents/{id}/pages/0/regenerate"), json!({"questions_per_page": 2}))
        .await;
    assert_api_error(status, &body, 409, "job_already_running");

    // another document is unaffected
    let (_, other) = s.upload(fixtures::marked_pdf(1), "one.pdf").await;
    let (status, _) = s
        .start_job(other["document_id"].as_str().unwrap(), json!({"questions_per_page": 1}))
        .await;
    assert_eq!(status, 202);

    let events = s.events(&job).await;
    assert_eq!(events.last().unwrap().data["status"], "Completed");
    // once done, the document accepts a new job straight away
    let (status, _) = s.start_job(id, json!({"kind": "analysis", "questions_per_page": 2})).await;
    assert_eq!(status, 202);
}

#[tokio::test]
async fn events_cover_each_page_once_with_replay() {
    let s = server(ServerOptions {
        mock: "delay_ms=120".into(),
        parallel: 1,
        ..ServerOptions::default()
    })
    .await;
    let (_, doc) = s.upload(fixtures::marked_pdf(4), "four.pdf").await;
    let id = doc["document_id"].as_str().unwrap();
    let (_, started) = s.start_job(id, json!({"kind": "comprehension", "questions_per_page": 3})).await;
    let job = started["job_id"].as_str().unwrap();

    // a first client leaves after two pages
    let resp = s.http.get(s.url(&format!("/api/jobs/{job}/events"))).send().await.unwrap();
    let early = read_sse(resp, 2).await;
    assert_eq!(early.len(), 2);

    // a reconnecting client gets the finished pages replayed, then the rest
    let all = s.events(job).await;
    let pages: Vec<u64> = all
        .iter()
        .filter(|e| e.event == "page")
        .map(|e| e.data["page_index"].as_u64().unwrap())
        .collect();
    assert_eq!(pages, [0, 1, 2, 3]);
    assert_eq!(all.iter().filter(|e| e.event == "done").count(), 1);
    assert_eq!(all.last().unwrap().event, "done");
    let done = &all.last().unwrap().data;
    assert_eq!(done["status"], "Completed");
    assert_eq!(done["job_id"], job);

    // resuming with Last-Event-ID skips what the client already has
    let resumed = s.events_from(job, Some(1)).await;
    let resumed_pages: Vec<u64> = resumed
        .iter()
        .filter(|e| e.event == "page")
        .map(|e| e.data["page_index"].as_u64().unwrap())
        .collect();
    assert_eq!(resumed_pages, [2, 3]);

    // event payloads carry the questions
    let first = &all[0].data;
    assert_eq!(first["status"], "done");
    assert_eq!(first["questions"]["pairs"].as_array().unwrap().len(), 3);
    assert_eq!(first["questions"]["pairs"][0]["label"], "C1");

    let (status, snapshot) = s.get_json(&format!("/api/jobs/{job}")).await;
    assert_eq!(status, 200);
    assert_eq!(snapshot["status"], "Completed");
}

#[tokio::test]
async fn errored_page_is_reported_and_others_are_stored() {
    let s = server(ServerOptions {
        mock: "fail_on=PAGE-2".into(),
        ..ServerOptions::default()
    })
    .await;
    let (_, doc) = s.upload(fixtures::marked_pdf(4), "four.pdf").await;
    let id = doc["document_id"].as_str().unwrap();
    let (_, started) = s.start_job(id, json!({"kind": "comprehension", "questions_per_page": 4})).await;
    let events = s.events(started["job_id"].as_str().unwrap()).await;
    let errored: Vec<&Value> = events.iter().filter(|e| e.data["status"] == "errored").map(|e| &e.data).collect();
    assert_eq!(errored.len(), 1);
    assert_eq!(errored[0]["page_index"], 2);
    assert_eq!(errored[0]["error"]["code"], "provider_rejected");
    assert_eq!(events.last().unwrap().data["status"], "PartiallyCompleted");

    let (status, sets) = s.get_json(&format!("/api/documents/{id}/questions")).await;
    assert_eq!(status, 200);
    let stored: BTreeSet<u64> = sets.as_array().unwrap().iter().map(|s| s["page_index"].as_u64().unwrap()).collect();
    assert_eq!(stored, BTreeSet::from([0, 1, 3]));
}

#[tokio::test]
async fn questions_endpoint_filters() {
    let s = server(ServerOptions::default()).await;
    let (_, doc) = s.upload(fixtures::marked_pdf(3), "three.pdf").await;
    let id = doc["document_id"].as_str().unwrap();

    let (status, sets) = s.get_json(&format!("/api/documents/{id}/questions")).await;
    assert_eq!((status, sets), (200, json!([])));

    let (_, started) = s.start_job(id, json!({"kind": "comprehension", "questions_per_page": 2})).await;
    s.events(started["job_id"].as_str().unwrap()).await;

    let (_, all) = s.get_json(&format!("/api/documents/{id}/questions")).await;
    assert_eq!(all.as_array().unwrap().len(), 3);
    for set in all.as_array().unwrap() {
        for pair in set["pairs"].as_array().unwrap() {
            assert!(!pair["answer_text"].as_str().unwrap().is_empty());
        }
    }
    let (_, one) = s.get_json(&format!("/api/documents/{id}/questions?page=1")).await;
    assert_eq!(one.as_array().unwrap().len(), 1);
    assert_eq!(one[0]["page_index"], 1);
    let (status, none) = s.get_json(&format!("/api/documents/{id}/questions?kind=analysis")).await;
    assert_eq!((status, none), (200, json!([])));

    let (status, body) = s.get_json(&format!("/api/documents/{id}/questions?page=99")).await;
    assert_api_error(status, &body, 400, "page_out_of_range");
    let (status, body) = s.get_json(&format!("/api/documents/{id}/questions?page=first")).await;
    assert_api_error(status, &body, 400, "invalid_filter");
    let (status, body) = s.get_json(&format!("/api/documents/{id}/questions?kind=haiku")).await;
    assert_api_error(status, &body, 400, "invalid_filter");
    let (status, body) = s.get_json("/api/documents/missing/questions").await;
    assert_api_error(status, &body, 404, "document_not_found");
}

#[tokio::test]
async fn regenerate_replaces_one_page() {
    let s = server(ServerOptions::default()).await;
    let (_, doc) = s.upload(fixtures::marked_pdf(3), "three.pdf").await;
    let id = doc["document_id"].as_str().unwrap();
    let (_, started) = s.start_job(id, json!({"kind": "comprehension", "questions_per_page": 4})).await;
    s.events(started["job_id"].as_str().unwrap()).await;

    let (status, result) = s
        .post_json(
            &format!("/api/documents/{id}/pages/0/regenerate"),
            json!({"kind": "comprehension", "questions_per_page": 2}),
        )
        .await;
    assert_eq!(status, 200, "{result}");
    assert_eq!(result["status"], "done");
    let (_, page0) = s.get_json(&format!("/api/documents/{id}/questions?page=0")).await;
    assert_eq!(page0[0]["pairs"].as_array().unwrap().len(), 2);
    let (_, page1) = s.get_json(&format!("/api/documents/{id}/questions?page=1")).await;
    assert_eq!(page1[0]["pairs"].as_array().unwrap().len(), 4);

    let (status, body) = s
        .post_json(&format!("/api/documents/{id}/pages/5/regenerate"), json!({"questions_per_page": 2}))
        .await;
    assert_api_error(status, &body, 400, "page_out_of_range");
    let (status, body) = s
        .post_json(&format!("/api/documents/{id}/pages/0/regenerate"), json!({"questions_per_page": 11}))
        .await;
    assert_api_error(status, &body, 400, "count_out_of_range");
}

#[tokio::test]
async fn bounds_hold_for_every_count() {
    let s = server(ServerOptions::default()).await;
    let (_, doc) = s.upload(fixtures::marked_pdf(1), "one.pdf").await;
    let id = doc["document_id"].as_str().unwrap();
    for n in 0..=11i64 {
        let (status, body) = s.start_job(id, json!({"kind": "analysis", "questions_per_page": n})).await;
        if (1..=10).contains(&n) {
            assert_eq!(status, 202, "n={n}: {body}");
            s.events(body["job_id"].as_str().unwrap()).await;
        } else {
            assert_api_error(status, &body, 400, "count_out_of_range");
        }
    }
}
