//! Built-in demo target: a deterministic gNB configuration validator with
//! five injected bugs.
//!
//! Inputs that fail extraction or a domain check are rejected. Otherwise
//! the bug rules are checked in order and the first one that fires aborts
//! with its id:
//!
//! | id  | condition |
//! |-----|-----------|
//! | 101 | `absoluteFrequencySSB` outside the band's ARFCN range |
//! | 102 | `dl_absoluteFrequencyPointA` outside the band's ARFCN range |
//! | 103 | `dl_carrierBandwidth` below the band's minimum |
//! | 104 | `dl_frequencyBand` not in the band table |
//! | 105 | `controlResourceSetZero` in 13..=15 |
//!
//! Every comparison taken is recorded as a `chk:<name>:<verdict>` branch.

use std::collections::BTreeSet;

use crate::configfmt::{get_param, parse_config, ConfigDocument, ConfigError, ParamPath, Scalar};
use crate::target::{ExecOutcome, Feedback, OutcomeClass};

pub const REJECT_CODE: i32 = 2;
pub const CRASH_SSB_OUTSIDE_BAND: i32 = 101;
pub const CRASH_POINT_A_OUTSIDE_BAND: i32 = 102;
pub const CRASH_BANDWIDTH_TOO_SMALL: i32 = 103;
pub const CRASH_UNKNOWN_BAND: i32 = 104;
pub const CRASH_RESERVED_CORESET0: i32 = 105;
pub const CRASH_IDS: [i32; 5] = [101, 102, 103, 104, 105];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandSpec {
    pub band: i64,
    pub arfcn_lo: i64,
    pub arfcn_hi: i64,
    pub min_bw_rb: i64,
}

impl BandSpec {
    fn contains(&self, arfcn: i64) -> bool {
        (self.arfcn_lo..=self.arfcn_hi).contains(&arfcn)
    }
}

const BANDS: [BandSpec; 2] = [
    BandSpec {
        band: 41,
        arfcn_lo: 499_200,
        arfcn_hi: 537_999,
        min_bw_rb: 25,
    },
    BandSpec {
        band: 78,
        arfcn_lo: 620_000,
        arfcn_hi: 653_333,
        min_bw_rb: 25,
    },
];

/// The validator's band table, ordered by band number.
pub fn band_table() -> Vec<BandSpec> {
    BANDS.to_vec()
}

pub fn lookup_band(band: i64) -> Option<BandSpec> {
    BANDS.iter().copied().find(|b| b.band == band)
}

const GNB: &str = "gNBs[0]";
const SCC: &str = "gNBs[0].servingCellConfigCommon[0]";

/// The eight parameters the validator reads, with where they live.
pub const FIELDS: [(&str, &str); 8] = [
    ("do_CSIRS", GNB),
    ("do_SRS", GNB),
    ("controlResourceSetZero", SCC),
    ("searchSpaceZero", SCC),
    ("absoluteFrequencySSB", SCC),
    ("dl_frequencyBand", SCC),
    ("dl_absoluteFrequencyPointA", SCC),
    ("dl_carrierBandwidth", SCC),
];

/// Paths of the validator's parameters, in crash-table row order.
pub fn watch_paths() -> Vec<ParamPath> {
    FIELDS
        .iter()
        .map(|(name, parent)| {
            format!("{parent}.{name}")
                .parse()
                .expect("static paths are well formed")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidatorView {
    pub do_csirs: i64,
    pub do_srs: i64,
    pub control_resource_set_zero: i64,
    pub search_space_zero: i64,
    pub absolute_frequency_ssb: i64,
    pub dl_frequency_band: i64,
    pub dl_absolute_frequency_point_a: i64,
    pub dl_carrier_bandwidth: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractError {
    pub field: &'static str,
    pub reason: String,
}

impl ValidatorView {
    pub fn extract(d: &ConfigDocument) -> Result<Self, ExtractError> {
        let mut branches = BTreeSet::new();
        Self::extract_recording(d, &mut branches)
    }

    fn extract_recording(
        d: &ConfigDocument,
        branches: &mut BTreeSet<String>,
    ) -> Result<Self, ExtractError> {
        let mut values = [0i64; 8];
        let mut first_error = None;
        for (slot, (path, (name, _))) in values.iter_mut().zip(watch_paths().iter().zip(FIELDS)) {
            let verdict = match get_param(d, path) {
                Ok(Scalar::Int(v)) => {
                    *slot = *v;
                    "ok"
                }
                Ok(_) => {
                    first_error.get_or_insert(ExtractError {
                        field: name,
                        reason: "not an integer".into(),
                    });
                    "not_int"
                }
                Err(ConfigError::NotAScalar(_)) => {
                    first_error.get_or_insert(ExtractError {
                        field: name,
                        reason: "not a scalar".into(),
                    });
                    "not_scalar"
                }
                Err(_) => {
                    first_error.get_or_insert(ExtractError {
                        field: name,
                        reason: "missing".into(),
                    });
                    "missing"
                }
            };
            branches.insert(format!("chk:extract_{name}:{verdict}"));
        }
        if let Some(err) = first_error {
            return Err(err);
        }
        let [do_csirs, do_srs, control_resource_set_zero, search_space_zero, absolute_frequency_ssb, dl_frequency_band, dl_absolute_frequency_point_a, dl_carrier_bandwidth] =
            values;
        Ok(ValidatorView {
            do_csirs,
            do_srs,
            control_resource_set_zero,
            search_space_zero,
            absolute_frequency_ssb,
            dl_frequency_band,
            dl_absolute_frequency_point_a,
            dl_carrier_bandwidth,
        })
    }
}

struct Checks {
    branches: BTreeSet<String>,
}

impl Checks {
    fn check(&mut self, name: &str, ok: bool) -> bool {
        let verdict = if ok { "pass" } else { "fail" };
        self.branches.insert(format!("chk:{name}:{verdict}"));
        ok
    }
}

pub fn validate(d: &ConfigDocument) -> (ExecOutcome, Feedback) {
    let mut checks = Checks {
        branches: BTreeSet::new(),
    };
    let (class, message) = run_checks(d, &mut checks);
    (ExecOutcome::new(class, &message), Feedback::new(checks.branches))
}

/// Parses `text` first; unparseable input is rejected.
pub fn validate_text(text: &str) -> (ExecOutcome, Feedback) {
    match parse_config(text) {
        Ok(d) => validate(&d),
        Err(e) => {
            let branches = BTreeSet::from(["chk:parse:fail".to_string()]);
            (
                ExecOutcome::new(OutcomeClass::Reject(REJECT_CODE), &format!("{e}\n")),
                Feedback::new(branches),
            )
        }
    }
}

fn run_checks(d: &ConfigDocument, checks: &mut Checks) -> (OutcomeClass, String) {
    checks.branches.insert("chk:parse:pass".into());
    let view = match ValidatorView::extract_recording(d, &mut checks.branches) {
        Ok(v) => v,
        Err(e) => {
            return (
                OutcomeClass::Reject(REJECT_CODE),
                format!("reject: {} {}\n", e.field, e.reason),
            )
        }
    };

    let is_flag = |v: i64| v == 0 || v == 1;
    let is_index = |v: i64| (0..=15).contains(&v);
    let domain = [
        checks.check("domain_do_CSIRS", is_flag(view.do_csirs)),
        checks.check("domain_do_SRS", is_flag(view.do_srs)),
        checks.check("domain_controlResourceSetZero", is_index(view.control_resource_set_zero)),
        checks.check("domain_searchSpaceZero", is_index(view.search_space_zero)),
    ];
    if domain.contains(&false) {
        return (
            OutcomeClass::Reject(REJECT_CODE),
            "reject: parameter outside its domain\n".into(),
        );
    }

    let crash = |id: i32, why: String| (OutcomeClass::Crash(id), format!("abort {id}: {why}\n"));

    let band = lookup_band(view.dl_frequency_band);
    if let Some(spec) = band {
        checks.check("band_lookup", true);
        let ssb = view.absolute_frequency_ssb;
        if !checks.check("ssb_ge_lo", ssb >= spec.arfcn_lo) || !checks.check("ssb_le_hi", ssb <= spec.arfcn_hi) {
            return crash(
                CRASH_SSB_OUTSIDE_BAND,
                format!("absoluteFrequencySSB {ssb} outside band n{} range", spec.band),
            );
        }
        let point_a = view.dl_absolute_frequency_point_a;
        if !checks.check("point_a_ge_lo", point_a >= spec.arfcn_lo)
            || !checks.check("point_a_le_hi", point_a <= spec.arfcn_hi)
        {
            return crash(
                CRASH_POINT_A_OUTSIDE_BAND,
                format!("dl_absoluteFrequencyPointA {point_a} outside band n{} range", spec.band),
            );
        }
        debug_assert!(spec.contains(ssb) && spec.contains(point_a));
        if !checks.check("min_bandwidth", view.dl_carrier_bandwidth >= spec.min_bw_rb) {
            return crash(
                CRASH_BANDWIDTH_TOO_SMALL,
                format!(
                    "dl_carrierBandwidth {} below minimum {}",
                    view.dl_carrier_bandwidth, spec.min_bw_rb
                ),
            );
        }
    } else {
        checks.check("band_lookup", false);
        return crash(
            CRASH_UNKNOWN_BAND,
            format!("dl_frequencyBand {} not supported", view.dl_frequency_band),
        );
    }

    if !checks.check(
        "coreset0_not_reserved",
        !(13..=15).contains(&view.control_resource_set_zero),
    ) {
        return crash(
            CRASH_RESERVED_CORESET0,
            format!("controlResourceSetZero {} is reserved", view.control_resource_set_zero),
        );
    }
    (OutcomeClass::Ok, String::new())
}
