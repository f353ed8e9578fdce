//! OpenAPI description of the HTTP interface, served at `/spec`.

use serde_json::{json, Value};

fn error_response(description: &str) -> Value {
    json!({
        "description": description,
        "content": { "application/json": { "schema": { "$ref": "#/components/schemas/Error" } } }
    })
}

fn state_response() -> Value {
    json!({
        "description": "Session state",
        "content": { "application/json": { "schema": { "$ref": "#/components/schemas/SessionState" } } }
    })
}

fn id_param() -> Value {
    json!({ "name": "id", "in": "path", "required": true, "schema": { "type": "string" } })
}

fn json_body(schema: Value) -> Value {
    json!({ "required": false, "content": { "application/json": { "schema": schema } } })
}

pub fn openapi_spec() -> Value {
    json!({
        "openapi": "3.0.3",
        "info": {
            "title": "linehue session service",
            "version": env!("CARGO_PKG_VERSION"),
            "description": "Interactive colourised line density plots: upload lines, then steer threshold, cluster count, splits, hues and harmonic templates."
        },
        "paths": {
            "/sessions": {
                "post": {
                    "summary": "Create a session from a dataset or a synthetic generator spec",
                    "parameters": [{ "name": "kind", "in": "query", "schema": { "type": "string", "enum": ["trajectory", "timeseries"] } }],
                    "requestBody": {
                        "required": true,
                        "content": {
                            "text/csv": { "schema": { "type": "string" } },
                            "application/json": { "schema": { "$ref": "#/components/schemas/CreateSession" } }
                        }
                    },
                    "responses": {
                        "201": state_response(),
                        "413": error_response("Payload too large"),
                        "422": error_response("Parse failure, with row diagnostic")
                    }
                }
            },
            "/sessions/{id}": {
                "delete": {
                    "summary": "Drop a session",
                    "parameters": [id_param()],
                    "responses": { "204": { "description": "Deleted" }, "404": error_response("Unknown session") }
                }
            },
            "/sessions/{id}/state": {
                "get": {
                    "summary": "Full session state",
                    "parameters": [id_param()],
                    "responses": { "200": state_response(), "404": error_response("Unknown session") }
                }
            },
            "/sessions/{id}/params": {
                "post": {
                    "summary": "Change threshold, cluster count, metric or log scaling",
                    "parameters": [id_param()],
                    "requestBody": json_body(json!({
                        "type": "object",
                        "properties": {
                            "min_density": { "type": "integer", "minimum": 1 },
                            "k": { "type": "integer", "minimum": 1 },
                            "metric": { "type": "string", "enum": ["overlap", "jaccard", "dice"] },
                            "log_scale": { "type": "boolean" }
                        }
                    })),
                    "responses": {
                        "200": state_response(),
                        "404": error_response("Unknown session"),
                        "409": error_response("Threshold would drop sampled bins; re-preprocess"),
                        "422": error_response("Invalid values or nothing to cluster")
                    }
                }
            },
            "/sessions/{id}/preprocess": {
                "post": {
                    "summary": "Re-sample bins and rebuild the dendrogram (resets splits and pins)",
                    "parameters": [id_param()],
                    "requestBody": json_body(json!({
                        "type": "object",
                        "properties": {
                            "min_density": { "type": "integer", "minimum": 1 },
                            "max_samples": { "type": "integer", "minimum": 2 },
                            "seed": { "type": "integer" }
                        }
                    })),
                    "responses": {
                        "200": state_response(),
                        "404": error_response("Unknown session"),
                        "422": error_response("Invalid values or nothing to cluster")
                    }
                }
            },
            "/sessions/{id}/clusters/{cid}/split": {
                "post": {
                    "summary": "Split a cluster into its two dendrogram children",
                    "parameters": [id_param(), { "name": "cid", "in": "path", "required": true, "schema": { "type": "integer" } }],
                    "responses": {
                        "200": state_response(),
                        "404": error_response("Unknown session or cluster"),
                        "409": error_response("Cluster holds a single sampled bin")
                    }
                }
            },
            "/sessions/{id}/hues": {
                "post": {
                    "summary": "Pin a cluster hue (degrees, normalised to [0, 360)) or release the pin",
                    "parameters": [id_param()],
                    "requestBody": json_body(json!({
                        "type": "object",
                        "required": ["cluster"],
                        "properties": {
                            "cluster": { "type": "integer" },
                            "degrees": { "type": "number" },
                            "pinned": { "type": "boolean", "default": true }
                        }
                    })),
                    "responses": {
                        "200": state_response(),
                        "404": error_response("Unknown session or cluster"),
                        "422": error_response("Missing degrees")
                    }
                }
            },
            "/sessions/{id}/template": {
                "post": {
                    "summary": "Constrain hues to a harmonic template",
                    "parameters": [id_param()],
                    "requestBody": json_body(json!({
                        "type": "object",
                        "required": ["name"],
                        "properties": { "name": { "type": "string", "enum": ["", "i", "V", "L", "I", "T", "Y", "X", "N"] } }
                    })),
                    "responses": {
                        "200": state_response(),
                        "404": error_response("Unknown session"),
                        "422": error_response("Unknown template")
                    }
                }
            },
            "/sessions/{id}/render": {
                "get": {
                    "summary": "Colourised density plot",
                    "parameters": [id_param(), { "name": "scale", "in": "query", "schema": { "type": "integer", "minimum": 1, "maximum": 16 } }],
                    "responses": {
                        "200": { "description": "PNG image", "content": { "image/png": {} } },
                        "404": error_response("Unknown session")
                    }
                }
            },
            "/sessions/{id}/lines": {
                "get": {
                    "summary": "Lines assigned to one cluster (or `none` for unassigned)",
                    "parameters": [
                        id_param(),
                        { "name": "cluster", "in": "query", "required": true, "schema": { "type": "string" } },
                        { "name": "format", "in": "query", "schema": { "type": "string", "enum": ["json", "png"] } },
                        { "name": "scale", "in": "query", "schema": { "type": "integer" } }
                    ],
                    "responses": {
                        "200": { "description": "Line geometry JSON or PNG" },
                        "404": error_response("Unknown session or cluster")
                    }
                }
            },
            "/sessions/{id}/assignment": {
                "get": {
                    "summary": "Line-to-cluster assignment CSV",
                    "parameters": [id_param()],
                    "responses": { "200": { "description": "CSV", "content": { "text/csv": {} } }, "404": error_response("Unknown session") }
                }
            }
        },
        "components": {
            "schemas": {
                "Error": {
                    "type": "object",
                    "properties": { "error": { "type": "string" }, "hint": { "type": "string", "nullable": true } }
                },
                "CreateSession": {
                    "type": "object",
                    "properties": {
                        "data": { "type": "string", "description": "Dataset text (CSV or JSON lines)" },
                        "kind": { "type": "string", "enum": ["trajectory", "timeseries"] },
                        "synth": { "type": "object", "description": "Generator spec, e.g. {\"kind\": \"illusory\", \"n_pattern\": 400, \"n_noise\": 100, \"fanout\": 1.0}" },
                        "seed": { "type": "integer" },
                        "config": { "type": "object", "description": "Pipeline configuration overrides" }
                    }
                },
                "SessionState": {
                    "type": "object",
                    "properties": {
                        "id": { "type": "string" },
                        "revision": { "type": "integer" },
                        "kind": { "type": "string" },
                        "n_lines": { "type": "integer" },
                        "grid": { "type": "object" },
                        "params": { "type": "object" },
                        "clusters": { "type": "array", "items": { "type": "object" } },
                        "unassigned_lines": { "type": "integer" },
                        "stress": { "type": "number" },
                        "dendrogram": { "type": "object" }
                    }
                }
            }
        }
    })
}
