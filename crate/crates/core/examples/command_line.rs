//! Drive the command-line interface in-process: generate data, fit, select and
//! evaluate a bound, exactly as the `blockstein` binary would.

fn main() {
    let dir = std::env::temp_dir().join("blockstein-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json");
    let data = dir.join("train.csv");
    let data = data.to_str().expect("utf-8 path");

    let steps: [&[&str]; 4] = [
        &[
            "gen", "--config", config, "--n", "150", "--out", data, "--seed", "9",
        ],
        &["select", "--config", config, "--data", data, "--oracle"],
        &[
            "interval",
            "--config",
            config,
            "--data",
            data,
            "--x0",
            "1,0,0,0,0,0,0,0,0,0,0,0",
        ],
        &[
            "bounds", "--name", "theorem1", "--n", "100000", "--m", "12", "--m1", "3", "--eps",
            "0.5,1",
        ],
    ];
    for args in steps {
        println!("$ blockstein {}", args.join(" "));
        let code = blockstein::cli::run(std::iter::once("blockstein").chain(args.iter().copied()));
        assert_eq!(code, 0, "command failed");
    }
}
