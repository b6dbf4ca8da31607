use conffuzz::configfmt::*;
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    "[A-Za-z_][A-Za-z0-9_]{0,8}"
}

fn scalar() -> impl Strategy<Value = Scalar> {
    prop_oneof![
        any::<i64>().prop_map(Scalar::Int),
        any::<f64>()
            .prop_filter("finite", |f| f.is_finite())
            .prop_map(Scalar::Real),
        any::<bool>().prop_map(Scalar::Bool),
        any::<String>().prop_map(Scalar::Str),
    ]
}

fn group_of(inner: impl Strategy<Value = Value> + Clone) -> impl Strategy<Value = Group> {
    prop::collection::vec((ident(), inner), 0..5).prop_map(|pairs| {
        let mut settings: Vec<Setting> = Vec::new();
        for (name, value) in pairs {
            if settings.iter().all(|s| s.name != name) {
                settings.push(Setting { name, value });
            }
        }
        Group { settings }
    })
}

fn value() -> BoxedStrategy<Value> {
    let leaf = scalar().prop_map(Value::Scalar);
    leaf.prop_recursive(4, 48, 5, |inner| {
        prop_oneof![
            group_of(inner.clone()).prop_map(Value::Group),
            prop::collection::vec(inner, 0..4).prop_map(Value::List),
        ]
    })
    .boxed()
}

fn document() -> impl Strategy<Value = ConfigDocument> {
    group_of(value()).prop_map(|root| ConfigDocument { root })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parse_serialize_round_trip(d in document()) {
        let text = serialize_config(&d);
        let back = parse_config(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(serialize_config(&back), text);
    }

    #[test]
    fn set_then_get(d in document(), v in scalar(), pick in any::<prop::sample::Index>()) {
        let paths: Vec<ParamPath> = scalar_paths(&d).into_iter().map(|(p, _)| p).collect();
        prop_assume!(!paths.is_empty());
        let p = &paths[pick.index(paths.len())];
        let d2 = set_param(&d, p, v.clone()).unwrap();
        prop_assert_eq!(get_param(&d2, p).unwrap(), &v);
        let changed = diff_params(&d, &d2);
        prop_assert!(changed.len() <= 1);
        if let Some((path, _, _)) = changed.first() {
            prop_assert_eq!(path, p);
        }
    }

    #[test]
    fn diff_is_antisymmetric(a in document(), b in document()) {
        prop_assert!(diff_params(&a, &a).is_empty());
        let ab = diff_params(&a, &b);
        let ba = diff_params(&b, &a);
        prop_assert_eq!(ab.len(), ba.len());
        for (path, x, y) in &ab {
            prop_assert!(ba.iter().any(|(p, u, v)| p == path && u == y && v == x));
        }
    }

    #[test]
    fn param_path_display_parses_back(segs in prop::collection::vec(
        prop_oneof![ident().prop_map(Segment::Name), (0usize..50).prop_map(Segment::Index)], 1..6)) {
        prop_assume!(matches!(segs[0], Segment::Name(_)));
        let p = ParamPath::new(segs).unwrap();
        let back: ParamPath = p.to_string().parse().unwrap();
        prop_assert_eq!(back, p);
    }
}

#[test]
fn nested_path_resolves() {
    let d = parse_config(
        "gNBs = ( { servingCellConfigCommon = ( { absoluteFrequencySSB = 641280; } ); } );",
    )
    .unwrap();
    let p: ParamPath = "gNBs[0].servingCellConfigCommon[0].absoluteFrequencySSB".parse().unwrap();
    assert_eq!(get_param(&d, &p).unwrap(), &Scalar::Int(641280));
}

#[test]
fn missing_semicolon_is_a_syntax_error() {
    assert!(matches!(parse_config("x = 1 y = 2;"), Err(ConfigError::Syntax { .. })));
}

#[test]
fn canonical_basics() {
    assert_eq!(serialize_config(&ConfigDocument::default()), "");
    let d = parse_config("do_SRS=1;").unwrap();
    assert_eq!(serialize_config(&d), "do_SRS = 1;\n");
    assert!(matches!(parse_config("a = 1; a = 2;"), Err(ConfigError::DuplicateName { .. })));
    assert!(matches!(
        parse_config("a = 99999999999999999999;"),
        Err(ConfigError::Syntax { .. })
    ));
}
