use std::fs;
use std::path::{Path, PathBuf};

use multiflow::cli::{run_args, Checkpoint, RunConfig};
use multiflow::datagen::{parse_manifest, MANIFEST_FILE, MANIFEST_HEADER};
use multiflow::Error;

/// Runs a whitespace-separated command line.
fn run(line: &str) -> (i32, String) {
    let mut out = Vec::new();
    let args = std::iter::once("multiflow").chain(line.split_whitespace());
    let code = run_args(args, &mut out).unwrap_or_else(|e| panic!("{line}: {e}"));
    (code, String::from_utf8(out).unwrap())
}

fn run_err(line: &str) -> Error {
    let args = std::iter::once("multiflow").chain(line.split_whitespace());
    run_args(args, &mut Vec::new()).expect_err("command should fail")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Small model and short stages so a whole curriculum takes seconds.
fn tiny_config(dir: &Path, data: &Path, stages: &str) -> PathBuf {
    let text = format!(
        "model.channels = 8,8\nmodel.text_hidden = 8\nmodel.time_dim = 8\nschedule.steps = 40\n\
         schedule.beta_start = 0.002\nschedule.beta_end = 0.2\npaths.data = {}\n{stages}",
        data.display()
    );
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path
}

const THREE_STAGES: &str = "stage.0.samples = 24\nstage.0.epochs = 1\nstage.1.samples = 24\nstage.1.epochs = 1\n\
                            stage.2.samples = 24\nstage.2.epochs = 1\n";

fn dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    run(&format!("gen-data --out {} --n 60 --seed 3", s(&data)));
    data
}

#[test]
fn gen_data_is_byte_identical_and_handles_zero_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        run(&format!("gen-data --out {} --n 25 --seed 9 --noise-frac 0.5", s(d)));
    }
    assert_eq!(fs::read(a.join(MANIFEST_FILE)).unwrap(), fs::read(b.join(MANIFEST_FILE)).unwrap());
    for id in 0..25 {
        let f = format!("images/{id:06}.vdim");
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
    }
    assert_eq!(parse_manifest(&fs::read_to_string(a.join(MANIFEST_FILE)).unwrap()).unwrap().len(), 25);

    let empty = dir.path().join("empty");
    run(&format!("gen-data --out {} --n 0", s(&empty)));
    assert_eq!(fs::read_to_string(empty.join(MANIFEST_FILE)).unwrap(), format!("{MANIFEST_HEADER}\n"));
}

#[test]
fn train_resume_sample_and_edit_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = dataset(d);
    let cfg = tiny_config(d, &data, THREE_STAGES);

    // one uninterrupted run
    let full = d.join("full.vdck");
    run(&format!("train --config {} --out {}", s(&cfg), s(&full)));
    let full_log = fs::read_to_string(d.join("full.vdck.losses")).unwrap();
    assert_eq!(full_log.lines().count(), 3 + 3 * 2 + 3 * 4);

    // split at a stage boundary the run is reproduced exactly (optimizer
    // state starts fresh with every stage)
    let part = d.join("part.vdck");
    let log = d.join("part.losses");
    run(&format!("train --config {} --out {} --log {} --stop-after 3", s(&cfg), s(&part), s(&log)));
    let mid = Checkpoint::load(&part).unwrap();
    assert_eq!(mid.config.resume.map(|p| (p.stage, p.step)), Some((1, 0)));
    let done = d.join("done.vdck");
    run(&format!("train --config {} --resume {} --out {} --log {}", s(&cfg), s(&part), s(&done), s(&log)));
    assert_eq!(fs::read_to_string(&log).unwrap(), full_log);
    let (a, b) = (Checkpoint::load(&full).unwrap(), Checkpoint::load(&done).unwrap());
    assert!(a.params.bit_eq(&b.params));
    assert_eq!(a.config.resume, None);

    // mid-stage the next step's losses match
    let log2 = d.join("mid.losses");
    run(&format!("train --config {} --out {} --log {} --stop-after 4", s(&cfg), s(&part), s(&log2)));
    assert_eq!(Checkpoint::load(&part).unwrap().config.resume.map(|p| (p.stage, p.step)), Some((1, 1)));
    let log3 = d.join("next.losses");
    run(&format!(
        "train --config {} --resume {} --out {} --log {} --stop-after 1",
        s(&cfg),
        s(&part),
        s(&done),
        s(&log3)
    ));
    let full_lines: Vec<&str> = full_log.lines().collect();
    assert_eq!(fs::read_to_string(&log3).unwrap().lines().collect::<Vec<_>>(), full_lines[5..7]);

    let input = data.join("images/000000.vdim");
    let (out1, out2) = (d.join("s1"), d.join("s2"));
    for out in [&out1, &out2] {
        run(&format!("sample --ckpt {} --flow t2i --text blue,square,right --ddim --steps 8 --guidance-scale 2 --uncond-mode empty --seed 4 --count 2 --out {} --ppm", s(&full), s(out)));
    }
    for f in ["sample_000.vdim", "sample_001.vdim", "samples.txt", "provenance.txt"] {
        assert_eq!(fs::read(out1.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f}");
    }
    assert!(out1.join("sample_000.ppm").exists());
    let prov = fs::read_to_string(out1.join("provenance.txt")).unwrap();
    assert!(prov.starts_with("provenance multiflow") && prov.contains("flow=t2i") && prov.contains("ddim:8"));

    let (_, text) = run(&format!(
        "sample --ckpt {} --flow i2t --input {} --ddim --steps 5 --out {}",
        s(&full),
        s(&input),
        s(&d.join("i2t"))
    ));
    assert_eq!(text.lines().count(), 2);

    // level 0 variation is plain image variation sampling
    let var = d.join("var");
    run(&format!("variation --ckpt {} --input {} --level 0 --ddim --steps 5 --out {}", s(&full), s(&input), s(&var)));
    let iv = d.join("iv");
    run(&format!("sample --ckpt {} --flow iv --input {} --ddim --steps 5 --out {}", s(&full), s(&input), s(&iv)));
    assert_eq!(fs::read(var.join("variation_000.vdim")).unwrap(), fs::read(iv.join("sample_000.vdim")).unwrap());
    run(&format!("variation --ckpt {} --input {} --level -2 --ddim --steps 3 --out {}", s(&full), s(&input), s(&var)));

    // rate 0 blend is single-context sampling under the text
    let bl = d.join("blend");
    run(&format!(
        "blend --ckpt {} --ctx {} --text green,circle --rate 0 --ddim --steps 5 --out {}",
        s(&full),
        s(&input),
        s(&bl)
    ));
    let single = d.join("single");
    run(&format!("sample --ckpt {} --flow t2i --text green,circle --ddim --steps 5 --out {}", s(&full), s(&single)));
    assert_eq!(fs::read(bl.join("blend_000.vdim")).unwrap(), fs::read(single.join("sample_000.vdim")).unwrap());

    let mask = d.join("mask.txt");
    fs::write(&mask, "1 1 0 0 1 1 0 0\n").unwrap();
    for strategy in ["model-a", "model-b", "layer", "attention"] {
        run(&format!(
            "blend --ckpt {} --ctx {} {} --strategy {} --rate 0.4 --mask {} --scale 0.8 --ddim --steps 3 --out {}",
            s(&full),
            s(&input),
            s(&data.join("images/000001.vdim")),
            strategy,
            s(&mask),
            s(&bl)
        ));
    }

    let (_, text) = run(&format!(
        "edit --ckpt {} --input {} --neg red --pos blue --ddim --steps 4 --out {}",
        s(&full),
        s(&input),
        s(&d.join("edit"))
    ));
    assert!(text.lines().next().unwrap().contains(" -> "));
    assert!(d.join("edit/edit_000.vdim").exists());

    // the CSV export mirrors the log
    let csv = d.join("loss.csv");
    run(&format!("plot-loss --log {} --out {}", s(&log), s(&csv)));
    let csv = fs::read_to_string(csv).unwrap();
    assert_eq!(csv.lines().next(), Some("step,flow,loss"));
    assert_eq!(csv.lines().count(), 1 + full_log.lines().count());
}

#[test]
fn train_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = dataset(d);

    let empty = tiny_config(d, &data, "curriculum.stages = 0\n");
    assert!(matches!(run_err(&format!("train --config {} --out {}", s(&empty), s(&d.join("x")))), Error::Config(_)));

    let typo = tiny_config(d, &data, "scales.data_imgae = 0.2\n");
    assert!(matches!(run_err(&format!("train --config {} --out {}", s(&typo), s(&d.join("x")))), Error::Config(_)));

    // a checkpoint of another width cannot seed this run
    let one = tiny_config(d, &data, "curriculum.stages = 1\nstage.0.samples = 8\nstage.0.epochs = 1\n");
    let ck = d.join("one.vdck");
    run(&format!("train --config {} --out {}", s(&one), s(&ck)));
    let wide = d.join("wide.cfg");
    let text = fs::read_to_string(&one).unwrap().replace("model.channels = 8,8", "model.channels = 8,16");
    fs::write(&wide, text).unwrap();
    let err = run_err(&format!("train --config {} --resume {} --out {}", s(&wide), s(&ck), s(&d.join("y"))));
    assert!(matches!(err, Error::Dimension(_)), "{err}");

    // a single-flow model has no text layers
    let err =
        run_err(&format!("sample --ckpt {} --flow tv --text red --ddim --steps 2 --out {}", s(&ck), s(&d.join("z"))));
    assert!(matches!(err, Error::MissingGroup(_) | Error::Routing { .. }), "{err}");

    let mut bytes = fs::read(&ck).unwrap();
    let n = bytes.len();
    bytes[n / 3] ^= 1;
    fs::write(&ck, bytes).unwrap();
    let err = run_err(&format!(
        "sample --ckpt {} --flow iv --input {} --out {}",
        s(&ck),
        s(&data.join("images/000000.vdim")),
        s(&d.join("z"))
    ));
    assert!(matches!(err, Error::Checksum { .. }), "{err}");
}

#[test]
fn reports_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, text) = run("gradcheck --seed 2 --coords 4");
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("diffuser_loss_image") && text.trim_end().ends_with("PASS"));

    let cfg = d.join("default.cfg");
    fs::write(&cfg, RunConfig::default().render()).unwrap();
    let (_, text) = run(&format!("params-report --config {}", s(&cfg)));
    let ratio: f64 = text.lines().find_map(|l| l.strip_prefix("ratio")).unwrap().trim().parse().unwrap();
    assert!(ratio < 0.6, "{text}");

    let log = d.join("empty.log");
    fs::write(&log, "").unwrap();
    let csv = d.join("empty.csv");
    run(&format!("plot-loss --log {} --out {}", s(&log), s(&csv)));
    assert_eq!(fs::read_to_string(csv).unwrap(), "step,flow,loss\n");
}
