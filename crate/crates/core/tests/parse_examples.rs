use applied_chor::parser::{parse_chor, parse_program};

fn load(name: &str) -> String {
    std::fs::read_to_string(format!("{}/examples/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn examples_round_trip() {
    for f in ["filetransfer.ac", "ping.ac", "ring.ac"] {
        let p = parse_program(&load(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        let printed = p.to_string();
        let q = parse_program(&printed).unwrap_or_else(|e| panic!("{f} reprinted: {e}\n{printed}"));
        assert_eq!(p, q, "{f}");
        assert_eq!(printed, q.to_string());
        assert_eq!(parse_chor(&p.chor.to_string()).unwrap(), p.chor);
    }
}
