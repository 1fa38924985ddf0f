use std::fs::File;
use std::path::PathBuf;

use readscale_core::corpus::group_by_field_year;
use readscale_core::distfit::{self, fit_lognormal_values, ZeroPolicy};
use readscale_core::ingest::{self, ParseOptions};
use readscale_core::pipeline::{collapse_table, fit_table, AnalysisConfig};
use readscale_core::rescale;
use readscale_core::synth::{self, Discretization, FieldSpec, SynthSpec};
use readscale_core::{GroupKey, PublicationRecord};

fn fixture(name: &str) -> Vec<PublicationRecord> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let (records, report) = ingest::parse_records(File::open(path).unwrap(), &ParseOptions::default()).unwrap();
    assert_eq!(report.rejected, 0);
    records
}

#[test]
fn surgery_summary_cells() {
    let records = fixture("surgery_2010.csv");
    let groups = group_by_field_year(&records).unwrap();
    let s = groups[&GroupKey::new("Surgery", 2010)].stats().unwrap();
    assert_eq!(s.n, 96);
    assert_eq!(format!("{:.1}", s.r_mean), "21.6");
    assert_eq!(s.r_max, 101);

    let t = fit_table(&records, &AnalysisConfig::default()).unwrap();
    let row = &t.rows[0];
    assert_eq!((row.obs, row.r_max), (96, Some(101)));
    // reference W and p computed independently from the same 96 counts
    assert!((row.sw_w.unwrap() - 0.9843619313858096).abs() < 1e-4);
    assert!((row.sw_p.unwrap() - 0.311965851213415).abs() < 1e-3);
    assert_eq!(row.reject, Some(false));
}

#[test]
fn mathematics_rejected_after_correction() {
    let records = fixture("mathematics_2010.csv");
    let groups = group_by_field_year(&records).unwrap();
    let g = &groups[&GroupKey::new("Mathematics", 2010)];
    let s = g.stats().unwrap();
    assert_eq!((s.n, s.r_max), (85, 17));
    assert_eq!(format!("{:.1}", s.r_mean), "6.2");

    let res = distfit::test_lognormality(&g.reads(), ZeroPolicy::Exclude, 0.05, 240).unwrap();
    assert!((res.threshold() - 0.05 / 240.0).abs() < 1e-15);
    assert!((res.w - 0.709697565972922).abs() < 1e-4);
    assert!(res.p < res.threshold());
    assert!(res.reject);
}

#[test]
fn unequal_means_map_to_one() {
    let cell = rescale::rescale_counts(GroupKey::new("Cell biology", 2013), &[20, 50, 60, 70, 113]).unwrap();
    let surg = rescale::rescale_counts(GroupKey::new("Surgery", 2013), &[1, 8, 16, 20, 36]).unwrap();
    assert!((cell.r0 - 62.6).abs() < 1e-12);
    assert!((surg.r0 - 16.2).abs() < 1e-12);
    assert!((62.6 / cell.r0 - 1.0).abs() < 1e-12);
    assert!((16.2 / surg.r0 - 1.0).abs() < 1e-12);
}

#[test]
fn matched_share_of_large_file() {
    const ROWS: usize = 42_291;
    const UNMATCHED: usize = 1_659;
    let mut text = String::from("id,field,year,reads\n");
    for i in 0..ROWS {
        // spread the unmatched rows evenly through the file
        let unmatched = (i + 1) * UNMATCHED / ROWS != i * UNMATCHED / ROWS;
        let reads = if unmatched { String::new() } else { (i % 97).to_string() };
        text.push_str(&format!("10.1/{i},SC{},{},{reads}\n", i % 30, 2005 + i % 8));
    }
    let (records, report) = ingest::parse_records(text.as_bytes(), &ParseOptions::default()).unwrap();
    assert_eq!(report.accepted, 40_632);
    assert_eq!(report.rejected, UNMATCHED);
    assert_eq!(records.len(), 40_632);
    assert!(report.diagnostics.iter().all(|d| d.reason == "missing reads"));
    assert_eq!(report.total(), ROWS);
}

#[test]
fn continuous_fit_recovers_parameters_and_discretization_biases_upward() {
    let mut spec = SynthSpec {
        fields: vec![FieldSpec { label: "f".into(), n: 10_000, mu: -0.531, sigma2: 1.061 }],
        year: 2010,
        seed: 20100,
        discretization: Discretization::None,
        zero_inflation: 0.0,
    };
    let continuous = fit_lognormal_values(&synth::generate_values(&spec).unwrap()[0], ZeroPolicy::Exclude).unwrap();
    assert!((continuous.mu + 0.531).abs() < 0.05, "{}", continuous.mu);
    assert!((continuous.sigma2 - 1.061).abs() < 0.05, "{}", continuous.sigma2);

    spec.discretization = Discretization::CeilAtLeastOne;
    let coarse = fit_lognormal_values(&synth::generate_values(&spec).unwrap()[0], ZeroPolicy::Exclude).unwrap();
    // every discretized value is at least 1, so its log mean cannot be negative
    assert!(coarse.mu >= 0.0 && coarse.mu > continuous.mu);
}

#[test]
fn synthetic_field_means_span_target_range() {
    let means = synth::spread_means(30, 6.2, 44.7);
    let spec = SynthSpec {
        fields: means
            .iter()
            .enumerate()
            .map(|(i, &m)| FieldSpec::with_mean(synth::field_label(i), 2000, m, 1.06))
            .collect(),
        year: 2010,
        seed: 62,
        discretization: Discretization::RoundHalfUp,
        zero_inflation: 0.0,
    };
    let records = synth::generate_corpus(&spec).unwrap();
    let groups = group_by_field_year(&records).unwrap();
    let r0: Vec<f64> = groups.values().map(|g| g.stats().unwrap().r_mean).collect();
    for (got, want) in r0.iter().zip(&means) {
        assert!((got / want - 1.0).abs() < 0.1, "{got} vs {want}");
    }
    let (lo, hi) = r0.iter().fold((f64::MAX, 0f64), |(l, h), &v| (l.min(v), h.max(v)));
    assert!((5.6..6.8).contains(&lo) && (40.0..49.0).contains(&hi), "{lo}..{hi}");
}

#[test]
fn pooled_year_keeps_every_value() {
    let sizes = [
        412, 166, 181, 106, 195, 399, 99, 175, 113, 119, 103, 200, 108, 159, 142, 343, 85, 75, 111, 183, 190, 208,
        143, 134, 255, 128, 148, 64, 93, 96,
    ];
    let spec = SynthSpec {
        fields: sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| FieldSpec::with_mean(synth::field_label(i), n, 20.0, 1.06))
            .collect(),
        year: 2010,
        seed: 4933,
        discretization: Discretization::RoundHalfUp,
        zero_inflation: 0.0,
    };
    let records = synth::generate_corpus(&spec).unwrap();
    let out = collapse_table(&records, &AnalysisConfig::default()).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.rows[0].obs, 4933);
    assert_eq!(out.rows[0].strata, 30);
    let merged = out.curves[0].merged.as_ref().unwrap();
    assert_eq!(merged.points[0].1, 1.0);
}
