mod common;

use std::fs;

use common::{code, fit_args, read, run, simulate_smoke_args, small_data, stderr, write};

#[test]
fn kinship_from_trio_pedigree() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "ped.tsv", "subject_id\tfather\tmother\nf\t0\t0\nm\tNA\tNA\nc\tf\tm\n");
    let o = run(d.path(), &["kinship", "--method", "pedigree", "--input", "ped.tsv", "--out", "k.tsv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(d.path(), "k.tsv"), "subject_id\tf\tm\tc\nf\t1\t0\t0.5\nm\t0\t1\t0.5\nc\t0.5\t0.5\t1\n");
}

#[test]
fn kinship_errors_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "ped.tsv", "subject_id\tfather\tmother\nf\t0\t0\nm\t0\t0\nc\tf\tm\n");
    write(d.path(), "empty.tsv", "");
    let o = run(d.path(), &["kinship", "--method", "grm", "--input", "ped.tsv", "--out", "k.tsv"]);
    assert_eq!(code(&o), 1);
    let o = run(d.path(), &["kinship", "--method", "pedigree", "--input", "empty.tsv", "--out", "k.tsv"]);
    assert_eq!(code(&o), 2);
    let o = run(d.path(), &["kinship", "--method", "bogus", "--input", "ped.tsv", "--out", "k.tsv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn grm_from_genotype_file() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "g.tsv", "subject_id\trs1\trs2\trs3\na\t0\t1\t2\nb\t1\t2\t0\nc\t2\t0\tNA\nd\t1\t1\t1\n");
    let o = run(d.path(), &["kinship", "--method", "grm", "--input", "g.tsv", "--out", "k.tsv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(d.path(), "k.tsv").lines().count(), 5);
}

#[test]
fn collapse_one_gene_and_unmapped_snps() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "g.tsv", "subject_id\trs1\trs2\na\t0\t1\nb\t1\t2\nc\t2\t0\nd\t1\t1\n");
    write(d.path(), "map.tsv", "snp_id\tgene_id\nrs1\tG1\nrs2\tG1\nrs7\tG1\n");
    let o = run(d.path(), &["collapse", "--genotypes", "g.tsv", "--map", "map.tsv", "--out", "s.tsv"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("1 gene-map SNPs"));
    let s = read(d.path(), "s.tsv");
    assert!(s.starts_with("subject_id\tG1\n"));
    assert_eq!(s.lines().count(), 5);
    let o = run(d.path(), &["collapse", "--genotypes", "g.tsv", "--map", "missing.tsv", "--out", "s.tsv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn fit_rejects_scalar_penalty_on_two_traits() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    assert_eq!(code(&run(d.path(), &fit_args(&["--penalty", "mcp", "--out", "f.json"]))), 1);
    let o = run(d.path(), &fit_args(&["--penalty", "mcp", "--trait", "trait1", "--out", "f.json"]));
    assert_eq!(code(&o), 0);
}

#[test]
fn reports_match_golden_files() {
    let d = tempfile::tempdir().unwrap();
    let outputs = common::golden_outputs(d.path());
    let update = std::env::var_os("PMTMM_UPDATE_GOLDEN").is_some();
    for (name, actual) in &outputs {
        let path = common::golden_dir().join(name);
        if update {
            fs::create_dir_all(common::golden_dir()).unwrap();
            fs::write(&path, actual).unwrap();
        } else {
            let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(&expected == actual, "{name} differs from the golden file");
        }
    }

    let v: serde_json::Value = serde_json::from_str(&outputs[0].1).unwrap();
    for key in ["variance_components", "heritability", "selected", "cv_curve", "lambda_selected", "seed", "config", "ooi"] {
        assert!(v.get(key).is_some(), "fit report lacks {key}");
    }
    let t = pmtmm::io::Table::parse(std::path::Path::new("coef"), &outputs[1].1).unwrap();
    assert_eq!(t.header, vec!["gene_id", "trait1", "trait2"]);
    assert_eq!(t.rows.len(), 30);
    let p: serde_json::Value = serde_json::from_str(&outputs[2].1).unwrap();
    assert_eq!(p["fold_correlations"].as_array().unwrap().len(), 4);
    let f = p["formatted"][0].as_str().unwrap();
    assert!(f == "NA" || (f.contains('(') && f.ends_with(')')), "{f}");
    let lines: Vec<&str> = outputs[3].1.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines.iter().all(|l| l.split('\t').count() == 6));
}

#[test]
fn fit_is_byte_reproducible_and_thread_invariant() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    let mut outs = Vec::new();
    for (threads, out) in [("1", "a.json"), ("1", "b.json"), ("4", "c.json")] {
        assert_eq!(code(&run(d.path(), &fit_args(&["--threads", threads, "--out", out]))), 0);
        outs.push(read(d.path(), out));
    }
    assert_eq!(outs[0], outs[1]);
    let genes = |s: &str| serde_json::from_str::<serde_json::Value>(s).unwrap()["selected_genes"].clone();
    assert_eq!(genes(&outs[0]), genes(&outs[2]));
}

#[test]
fn config_file_precedence() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    write(d.path(), "c.toml", "seed = 5\nfolds = 4\nn_lambda = 20\n");
    let o = run(d.path(), &fit_args(&["--config", "c.toml", "--folds", "3", "--out", "f.json"]));
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&read(d.path(), "f.json")).unwrap();
    assert_eq!(v["config"]["seed"], 5);
    assert_eq!(v["config"]["folds"], 3);
    // --n-lambda 30 on the command line overrides the file
    assert_eq!(v["config"]["n_lambda"], 30);
    write(d.path(), "bad.toml", "sed = 5\n");
    assert_eq!(code(&run(d.path(), &fit_args(&["--config", "bad.toml", "--out", "f.json"]))), 1);
}

#[test]
fn predict_on_training_subjects_with_strong_heritability() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        d.path(),
        &[
            "simulate", "--data-only", "--scenarios", "3", "--structure", "hom", "--families", "4", "--family-size", "10",
            "--genes", "30", "--beta0", "0.5", "--seed", "3", "--out-dir", "data",
        ],
    );
    assert_eq!(code(&o), 0);
    let o = run(
        d.path(),
        &[
            "predict", "--train", "data/s3_hom_pheno.tsv", "--test", "data/s3_hom_pheno.tsv", "--scores",
            "data/s3_hom_scores.tsv", "--kinship", "data/s3_hom_kinship.tsv", "--n-lambda", "30", "--report", "r.json",
            "--out", "p.tsv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&read(d.path(), "r.json")).unwrap();
    for c in v["correlations"].as_array().unwrap() {
        assert!(c.as_f64().unwrap() > 0.9, "{c}");
    }
    assert_eq!(read(d.path(), "p.tsv").lines().count(), 41);
}

#[test]
fn predict_errors_and_na() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    write(d.path(), "test.tsv", "subject_id\ttrait1\ttrait2\nX1\t0.1\t0.2\nX2\t0.3\t0.1\nX3\t1\t2\n");
    let o = run(
        d.path(),
        &[
            "predict", "--train", "data/s2_hom_pheno.tsv", "--test", "test.tsv", "--scores", "data/s2_hom_scores.tsv",
            "--kinship", "data/s2_hom_kinship.tsv", "--n-lambda", "20", "--report", "r.json",
        ],
    );
    assert_eq!(code(&o), 2);

    // constant gene scores under the linear model predict a constant
    let pheno = read(d.path(), "data/s2_hom_pheno.tsv");
    let ids: Vec<&str> = pheno.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    let mut scores = String::from("subject_id\tG1\n");
    for id in &ids {
        scores.push_str(&format!("{id}\t1\n"));
    }
    write(d.path(), "flat.tsv", &scores);
    let mut test = String::from("subject_id\ttrait1\ttrait2\n");
    for (i, id) in ids.iter().take(6).enumerate() {
        test.push_str(&format!("{id}\t{}\t{}\n", i, 2 * i));
    }
    write(d.path(), "t6.tsv", &test);
    let o = run(
        d.path(),
        &[
            "predict", "--train", "data/s2_hom_pheno.tsv", "--test", "t6.tsv", "--scores", "flat.tsv", "--linear",
            "--n-lambda", "10", "--report", "r.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("correlation NA"));
    let v: serde_json::Value = serde_json::from_str(&read(d.path(), "r.json")).unwrap();
    assert!(v["correlations"][0].is_null());
}

#[test]
fn simulate_outputs_long_and_roc_tables() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &simulate_smoke_args("out", "1"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(d.path(), "out/pauc_long.tsv").lines().count(), 49);
    let roc = read(d.path(), "out/roc_points.tsv");
    assert!(roc.starts_with("scenario\tstructure\tmethod\treplicate\tpauc\tfpr\ttpr\n"));
}

#[test]
fn simulate_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let args = |out: &'static str, threads: &'static str| {
        vec![
            "simulate", "--scenarios", "2", "--structure", "hom", "--reps", "3", "--families", "3", "--family-size", "10",
            "--genes", "40", "--n-lambda", "30", "--threads", threads, "--out-dir", out,
        ]
    };
    for (out, t) in [("a", "1"), ("b", "1"), ("c", "4")] {
        assert_eq!(code(&run(d.path(), &args(out, t))), 0);
    }
    assert_eq!(read(d.path(), "a/roc_points.tsv"), read(d.path(), "b/roc_points.tsv"));
    assert_eq!(read(d.path(), "a/pauc_table.tsv"), read(d.path(), "b/pauc_table.tsv"));
    assert_eq!(read(d.path(), "a/pauc_table.tsv"), read(d.path(), "c/pauc_table.tsv"));
}
