use std::process::Command;

fn main() {
    let described = Command::new("git")
        .args(["describe", "--tags", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_owned())
        .unwrap_or_default();
    let pkg = std::env::var("CARGO_PKG_VERSION").unwrap_or_default();
    let version = if described.is_empty() { format!("v{pkg}") } else { format!("v{pkg}-g{described}") };
    println!("cargo:rustc-env=AGGPOLICY_VERSION={version}");
    println!("cargo:rerun-if-changed=../../.git/HEAD");
    println!("cargo:rerun-if-changed=../../.git/index");
}
