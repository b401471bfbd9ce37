use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use gridtoken_core::scope::{downscope, Authz, Scope};
use gridtoken_core::{
    mint, verify, ClaimSet, Jwk, KeyRing, KeySet, SigningKey, VerifyError, VerifyPolicy,
    ANY_AUDIENCE,
};
use proptest::prelude::*;
use std::sync::OnceLock;

// ---------------------------------------------------------------------------
// Oracles. These deliberately avoid the crate's scope and claim parsers.
// ---------------------------------------------------------------------------

/// Split a scope string by hand and decide subsumption by comparing the
/// `/`-separated segment lists.
fn oracle_subsumes(granted: &str, requested: &str) -> bool {
    let split = |s: &str| -> (String, Option<Vec<String>>) {
        match s.find(':') {
            None => (s.to_string(), None),
            Some(i) => {
                let path = &s[i + 1..];
                let segs = path
                    .split('/')
                    .filter(|x| !x.is_empty())
                    .map(String::from)
                    .collect();
                (s[..i].to_string(), Some(segs))
            }
        }
    };
    let (ga, gp) = split(granted);
    let (ra, rp) = split(requested);
    if ga != ra {
        return false;
    }
    match (gp, rp) {
        (None, None) => true,
        (Some(g), Some(r)) => g.len() <= r.len() && g.iter().zip(r.iter()).all(|(a, b)| a == b),
        _ => false,
    }
}

/// Decode the payload segment directly and compare against the input claims.
fn oracle_payload_matches(token: &str, c: &ClaimSet) -> Result<(), String> {
    let payload = token.split('.').nth(1).ok_or("no payload")?;
    let bytes = URL_SAFE_NO_PAD.decode(payload).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    let check = |name: &str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(format!("field {name} differs: {v}"))
        }
    };
    check("iss", v["iss"] == c.iss.as_str())?;
    check("sub", v["sub"] == c.sub.as_str())?;
    check("jti", v["jti"] == c.jti.as_str())?;
    check("exp", v["exp"] == c.exp)?;
    check("iat", v["iat"] == c.iat)?;
    check("nbf", v["nbf"] == c.nbf)?;
    check("wlcg.ver", v["wlcg.ver"] == c.ver.as_str())?;
    let aud: Vec<String> = match &v["aud"] {
        serde_json::Value::String(s) => vec![s.clone()],
        serde_json::Value::Array(a) => a.iter().map(|x| x.as_str().unwrap().to_string()).collect(),
        other => return Err(format!("aud has unexpected shape {other}")),
    };
    check("aud", aud == c.aud)?;
    let scope: Vec<String> = v["scope"]
        .as_str()
        .unwrap_or("")
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let want: Vec<String> = c.scope.iter().map(|s| s.to_string()).collect();
    check("scope", scope == want)?;
    let groups: Vec<String> = v
        .get("wlcg.groups")
        .and_then(|g| g.as_array())
        .map(|a| a.iter().map(|x| x.as_str().unwrap().to_string()).collect())
        .unwrap_or_default();
    check("groups", groups == c.groups)
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

fn authz() -> impl Strategy<Value = Authz> {
    prop::sample::select(Authz::ALL.to_vec())
}

fn path_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "b", "ab", "dune", "raw"]),
        0..4,
    )
    .prop_map(|segs| format!("/{}", segs.join("/")))
}

fn scope_text() -> impl Strategy<Value = String> {
    (authz(), proptest::option::of(path_text())).prop_map(|(a, p)| match p {
        Some(p) if a.allows_path() => format!("{a}:{p}"),
        _ => a.to_string(),
    })
}

fn scope() -> impl Strategy<Value = Scope> {
    scope_text().prop_map(|s| s.parse().unwrap())
}

fn claims() -> impl Strategy<Value = ClaimSet> {
    (
        prop::sample::select(vec!["dune", "fermilab", "icarus", "mu2e"]),
        "[a-z][a-z0-9]{0,11}",
        prop::collection::vec(
            prop::sample::select(vec![ANY_AUDIENCE, "https://rcds.test", "dcache.test"]),
            1..3,
        ),
        0i64..2_000_000_000,
        0i64..100,
        1i64..5_000_000,
        "[a-f0-9]{8,32}",
        prop::collection::vec(scope(), 0..5),
        prop::collection::vec(
            prop::sample::select(vec!["/gm2", "/gm2/production", "/dune/analysis"]),
            0..3,
        ),
    )
        .prop_map(
            |(iss, sub, aud, iat, nbf_off, life, jti, scope, groups)| ClaimSet {
                iss: format!("https://issuer.test/{iss}"),
                sub,
                aud: aud.into_iter().map(String::from).collect(),
                iat,
                nbf: iat + nbf_off.min(life),
                exp: iat + life,
                jti,
                scope,
                groups: groups.into_iter().map(String::from).collect(),
                ver: "1.0".into(),
            },
        )
}

fn ring() -> &'static KeyRing {
    static RING: OnceLock<KeyRing> = OnceLock::new();
    RING.get_or_init(|| KeyRing::new(SigningKey::generate("prop-key")))
}

// ---------------------------------------------------------------------------
// Frozen examples (values computed with the oracles above)
// ---------------------------------------------------------------------------

#[test]
fn frozen_subsumption_examples() {
    let cases = [
        ("storage.read:/dune", "storage.read:/dune/raw/run1", true),
        ("storage.read:/dune", "storage.read:/dunesw", false),
        ("storage.read:/", "storage.read:/gm2", true),
    ];
    for (g, r, want) in cases {
        assert_eq!(oracle_subsumes(g, r), want, "oracle {g} {r}");
        let g: Scope = g.parse().unwrap();
        let r: Scope = r.parse().unwrap();
        assert_eq!(g.subsumes(&r), want, "{g} {r}");
    }
}

#[test]
fn frozen_downscope_example() {
    let granted: Vec<Scope> = vec![
        "storage.read:/".parse().unwrap(),
        "compute.create".parse().unwrap(),
    ];
    let req: Vec<Scope> = vec!["storage.read:/gm2".parse().unwrap()];
    assert!(oracle_subsumes("storage.read:/", "storage.read:/gm2"));
    assert_eq!(downscope(&granted, &req).unwrap(), req);
}

#[test]
fn rs256_tokens_accepted_on_verify() {
    let jwks = KeySet::from_json(include_str!("fixtures/rsa_test_jwks.json")).unwrap();
    let public: Jwk = jwks.get("rsa-test").unwrap().clone();
    let key =
        SigningKey::from_rsa_pem(include_bytes!("fixtures/rsa_test_key.pem"), public).unwrap();
    let c = ClaimSet {
        iss: "https://issuer.test/legacy".into(),
        sub: "alice".into(),
        aud: vec![ANY_AUDIENCE.into()],
        exp: 10_800,
        iat: 0,
        nbf: 0,
        jti: "r1".into(),
        scope: vec!["compute.read".parse().unwrap()],
        groups: vec![],
        ver: "1.0".into(),
    };
    let token = mint(&c, &key).unwrap();
    let header: serde_json::Value = serde_json::from_slice(
        &URL_SAFE_NO_PAD
            .decode(token.split('.').next().unwrap())
            .unwrap(),
    )
    .unwrap();
    assert_eq!(header["alg"], "RS256");
    assert_eq!(header["kid"], "rsa-test");
    assert_eq!(
        verify(&token, &jwks, &VerifyPolicy::permissive(&c.iss), 5).unwrap(),
        c
    );
}

#[test]
fn jwks_document_round_trips_through_json() {
    let mut ring = KeyRing::new(SigningKey::generate("a"));
    ring.rotate(SigningKey::generate("b")).unwrap();
    let doc = ring.public_set().to_json();
    let parsed = KeySet::from_json(&doc).unwrap();
    assert_eq!(parsed, ring.public_set());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mint_verify_round_trip(c in claims()) {
        let token = mint(&c, ring().current()).unwrap();
        if let Err(e) = oracle_payload_matches(&token, &c) {
            return Err(TestCaseError::fail(e));
        }
        let got = verify(&token, &ring().public_set(), &VerifyPolicy::permissive(&c.iss), c.nbf).unwrap();
        prop_assert_eq!(got, c);
    }

    #[test]
    fn payload_tampering_detected(c in claims(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let token = mint(&c, ring().current()).unwrap();
        let mut parts: Vec<String> = token.split('.').map(String::from).collect();
        let mut payload = URL_SAFE_NO_PAD.decode(&parts[1]).unwrap();
        let i = pos.index(payload.len());
        payload[i] ^= flip;
        parts[1] = URL_SAFE_NO_PAD.encode(&payload);
        let tampered = parts.join(".");
        let res = verify(&tampered, &ring().public_set(), &VerifyPolicy::permissive(&c.iss), c.nbf);
        prop_assert!(res.is_err());
    }

    #[test]
    fn subsumes_agrees_with_segment_oracle(a in scope_text(), b in scope_text()) {
        let sa: Scope = a.parse().unwrap();
        let sb: Scope = b.parse().unwrap();
        prop_assert_eq!(sa.subsumes(&sb), oracle_subsumes(&a, &b));
    }

    #[test]
    fn subsumes_reflexive_and_transitive(a in scope(), b in scope(), c in scope()) {
        prop_assert!(a.subsumes(&a));
        if a.subsumes(&b) && b.subsumes(&c) {
            prop_assert!(a.subsumes(&c));
        }
    }

    #[test]
    fn downscope_output_covered_by_grant(
        granted in prop::collection::vec(scope(), 0..5),
        requested in prop::collection::vec(scope(), 0..5),
    ) {
        let all_covered = requested.iter().all(|r| granted.iter().any(|g| oracle_subsumes(&g.to_string(), &r.to_string())));
        match downscope(&granted, &requested) {
            Ok(out) => {
                prop_assert!(all_covered);
                for s in &out {
                    prop_assert!(granted.iter().any(|g| oracle_subsumes(&g.to_string(), &s.to_string())));
                }
            }
            Err(refused) => {
                prop_assert!(!all_covered);
                prop_assert!(!granted.iter().any(|g| g.subsumes(&refused.0)));
            }
        }
    }

    #[test]
    fn parse_display_round_trip(text in scope_text()) {
        let s: Scope = text.parse().unwrap();
        prop_assert_eq!(s.to_string(), text.clone());
    }
}

#[test]
fn signature_segment_tampering_is_bad_signature() {
    let c = ClaimSet {
        iss: "https://issuer.test/dune".into(),
        sub: "alice".into(),
        aud: vec![ANY_AUDIENCE.into()],
        exp: 100,
        iat: 0,
        nbf: 0,
        jti: "x".into(),
        scope: vec![],
        groups: vec![],
        ver: "1.0".into(),
    };
    let token = mint(&c, ring().current()).unwrap();
    let mut parts: Vec<String> = token.split('.').map(String::from).collect();
    let mut sig = URL_SAFE_NO_PAD.decode(&parts[2]).unwrap();
    sig[5] ^= 1;
    parts[2] = URL_SAFE_NO_PAD.encode(&sig);
    let err = verify(
        &parts.join("."),
        &ring().public_set(),
        &VerifyPolicy::permissive(&c.iss),
        0,
    )
    .unwrap_err();
    assert_eq!(err, VerifyError::BadSignature);
}
