use std::path::Path;
use std::process::{Command, Output};

use dawp_core::obsio::{read_grid, write_swath, SwathBatch};

const SMALL: [&str; 4] = ["height=48", "width=96", "hours=16", "train_hours=12"];

fn dawp(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dawp"));
    c.env_remove("DAWP_SEED").args(args);
    c
}

fn small(c: &mut Command) -> &mut Command {
    for kv in SMALL {
        c.arg("--set").arg(kv);
    }
    c
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn expect(o: &Output, code: i32, kind: &str) {
    assert_eq!(o.status.code(), Some(code), "{}", stderr(o));
    let e = stderr(o);
    assert_eq!(e.lines().count(), 1, "{e}");
    assert!(e.starts_with(&format!("error[{kind}]: ")), "{e}");
}

fn echoed_seed(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("config.txt")).unwrap();
    text.lines().find_map(|l| l.strip_prefix("seed = ")).unwrap().to_string()
}

#[test]
fn usage_errors_exit_2() {
    expect(&dawp(&[]).output().unwrap(), 2, "usage");
    expect(&dawp(&["train-vae", "--data", "x"]).output().unwrap(), 2, "usage");
    expect(&dawp(&["gradcheck"]).output().unwrap(), 2, "usage");
    expect(&dawp(&["gen-data", "--out", "x", "--set", "novalue"]).output().unwrap(), 2, "usage");
    assert_eq!(dawp(&["--help"]).output().unwrap().status.code(), Some(0));
}

#[test]
fn config_errors_exit_3() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o").display().to_string();
    expect(&dawp(&["gen-data", "--out", &out, "--set", "bogus=1"]).output().unwrap(), 3, "config");
    expect(&dawp(&["gen-data", "--out", &out, "--set", "tile=25"]).output().unwrap(), 3, "config");
    expect(&dawp(&["gen-data", "--out", &out, "--preset", "huge"]).output().unwrap(), 3, "config");
    let cfg = d.path().join("c.txt");
    std::fs::write(&cfg, "preset = desk\nseed = 3\n").unwrap();
    let cfg = cfg.display().to_string();
    expect(&dawp(&["gen-data", "--out", &out, "--config", &cfg, "--preset", "paper"]).output().unwrap(), 3, "config");
    expect(&dawp(&["gen-data", "--out", &out]).env("DAWP_SEED", "seven").output().unwrap(), 3, "config");
    assert!(!d.path().join("o").exists());
}

#[test]
fn missing_and_corrupt_inputs_exit_4() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nothing").display().to_string();
    let out = d.path().join("o").display().to_string();
    expect(&dawp(&["train-vae", "--data", &missing, "--out", &out]).output().unwrap(), 4, "format");
    let bad = d.path().join("bad.swt");
    std::fs::write(&bad, b"DAWPSWT1 truncated").unwrap();
    let bad = bad.display().to_string();
    expect(&dawp(&["remap", "--swath", &bad, "--hour", "0", "--out", &out]).output().unwrap(), 4, "format");
}

#[test]
fn gen_data_echoes_config_and_seed_precedence() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a");
    let o = small(&mut dawp(&["gen-data", "--out", a.to_str().unwrap()])).env("DAWP_SEED", "21").output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(echoed_seed(&a), "21");
    assert!(a.join("manifest.txt").exists());

    let b = d.path().join("b");
    let o = small(&mut dawp(&["gen-data", "--out", b.to_str().unwrap(), "--seed", "5"])).env("DAWP_SEED", "21").output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(echoed_seed(&b), "5");
    let text = std::fs::read_to_string(b.join("config.txt")).unwrap();
    assert!(text.starts_with("preset = desk\n"));
    assert!(text.contains("\nhours = 16\n"));
}

#[test]
fn remap_writes_a_grid() {
    let d = tempfile::tempdir().unwrap();
    let mut s = SwathBatch::empty("alpha", 3);
    s.push(10.0, 20.0, &[1.0, 2.0, 3.0]);
    s.push(10.1, 20.1, &[3.0, f32::NAN, 5.0]);
    let swath = d.path().join("s.swt");
    write_swath(&swath, &s).unwrap();
    let out = d.path().join("r.grd");
    let o = dawp(&["remap", "--swath", swath.to_str().unwrap(), "--hour", "4", "--out", out.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("remapped 2 samples"));
    let g = read_grid(&out).unwrap();
    assert_eq!((g.channels, g.height, g.width, g.timestamps.clone()), (3, 96, 192, vec![4]));
    let mut present: Vec<f32> = g.data.iter().copied().filter(|v| !v.is_nan()).collect();
    present.sort_by(f32::total_cmp);
    assert_eq!(present, vec![2.0, 2.0, 4.0]);
}

#[test]
fn diverging_training_exits_5() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let o = small(&mut dawp(&["gen-data", "--out", data.to_str().unwrap()])).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let models = d.path().join("m");
    let o = small(&mut dawp(&["train-vae", "--data", data.to_str().unwrap(), "--out", models.to_str().unwrap()]))
        .args(["--set", "lr=1e30", "--set", "warmup_lr=1e30", "--set", "vae_steps=20", "--set", "vae_batch=2"])
        .output()
        .unwrap();
    expect(&o, 5, "numeric");
}

#[test]
fn gradcheck_all_prints_a_passing_table() {
    let o = dawp(&["gradcheck", "--all"]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    for name in ["layer_norm", "masked_attention", "gelu_ffn", "swiglu_ffn", "patch_embed", "vae_loss", "ts_block_d16"] {
        assert!(out.contains(name), "{out}");
    }
}
