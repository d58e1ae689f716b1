//! Regenerate the shipped chat fixtures for the sample reports.
//!
//! Runs the full pipeline in record mode against a scripted offline model,
//! writing one fixture per request into `samples/fixtures/`. Replay runs
//! (`run_replay_pipeline`, the acceptance suite, the CLI with
//! `--mode replay`) serve these fixtures with zero network I/O.
//!
//! Rerun after changing prompt templates or stage request construction:
//! cache keys hash the full request content, so any wording change retires
//! the old fixtures.
//!
//! ```bash
//! cargo run --example record_fixtures
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use attackg_plus::catalog::load_catalog;
use attackg_plus::config::RunConfig;
use attackg_plus::gateway::{
    Backend, BackendMode, EndpointConfig, Transport, TransportReply,
};
use attackg_plus::pipeline;

/// Offline stand-in for a chat model: canned responses selected by
/// substring rules over the outgoing user prompt.
struct ScriptedModel {
    rules: Vec<(&'static [&'static str], &'static str)>,
}

impl Transport for ScriptedModel {
    fn post_json(
        &self,
        _url: &str,
        _bearer: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<TransportReply, String> {
        let user = body["messages"][1]["content"].as_str().unwrap_or_default();
        for (needles, response) in &self.rules {
            if needles.iter().all(|needle| user.contains(needle)) {
                return Ok(TransportReply {
                    status: 200,
                    body: serde_json::json!({
                        "choices": [{
                            "message": {"role": "assistant", "content": response},
                            "finish_reason": "stop"
                        }],
                        "usage": {"prompt_tokens": user.len() / 4, "completion_tokens": response.len() / 4}
                    })
                    .to_string(),
                });
            }
        }
        Err(format!(
            "no scripted response matches this request: {}…",
            user.chars().take(160).collect::<String>()
        ))
    }
}

// Stage markers from the prompt templates.
const REWRITE: &str = "Reorganize it into sections";
const EXTRACT: &str = "Extract atomic threat events";
const IDENTIFY: &str = "Label each paragraph";
const SUMMARIZE: &str = "Summarize the attacker's state";

fn rules() -> Vec<(&'static [&'static str], &'static str)> {
    vec![
        // --- c5-apt-skhack -------------------------------------------------
        (
            &[REWRITE, "SK Communications"],
            r#"```json
{
  "sections": [
    {"tactic": "initial-access", "paragraphs": [
      "The attackers compromised the ESTsoft ALZip update server used across the SK Communications network.",
      "The update server delivered the malicious installer nation.exe to 62 employee workstations."
    ]},
    {"tactic": "execution", "paragraphs": [
      "nation.exe installed the backdoor Backdoor.Agent.Hza on the compromised workstations.",
      "Backdoor.Agent.Hza executed attacker-supplied scripts through the Windows command shell."
    ]},
    {"tactic": "defense-evasion", "paragraphs": [
      "The attackers cleared Windows event logs on the affected workstations to hide their activity."
    ]},
    {"tactic": "exfiltration", "paragraphs": [
      "An attempt to copy the subscriber database from a hardened backup server failed.",
      "The attackers exfiltrated the personal data of 35 million Nate and Cyworld users to a command-and-control server located abroad."
    ]},
    {"tactic": "other", "paragraphs": [
      "SK Communications operated the Nate portal and the Cyworld social network at the time of the incident."
    ]}
  ]
}
```"#,
        ),
        (
            &[EXTRACT, "\"initial-access\"", "ALZip"],
            "1: attackers | attacker | compromised | success | ESTsoft ALZip update server | network-endpoint\n\
             2: ESTsoft ALZip update server=The update server | network-endpoint | delivered | success | nation.exe | malware\n\
             2: nation.exe ~ located-at ~ ESTsoft ALZip update server",
        ),
        (
            &[EXTRACT, "\"execution\"", "Backdoor.Agent.Hza"],
            "3: nation.exe | malware | installed | success | Backdoor.Agent.Hza | malware\n\
             4: Backdoor.Agent.Hza | malware | executed | success | attacker-supplied scripts | tool",
        ),
        (
            &[EXTRACT, "\"defense-evasion\"", "event logs"],
            "5: attackers | attacker | cleared | success | Windows event logs | file",
        ),
        (
            &[EXTRACT, "\"exfiltration\"", "35 million"],
            "6: attackers | attacker | copy | failure | subscriber database | information\n\
             7: attackers | attacker | exfiltrated | success | personal data of 35 million users | information\n\
             7: Backdoor.Agent.Hza ~ communicates-with ~ command-and-control server",
        ),
        (
            &[IDENTIFY, "\"initial-access\"", "ALZip"],
            "1: T1195\n2: T1195.002",
        ),
        (
            &[IDENTIFY, "\"execution\"", "Backdoor.Agent.Hza"],
            "3: T1059\n4: T1059.003",
        ),
        (
            &[IDENTIFY, "\"defense-evasion\"", "event logs"],
            "5: T1070\n5: T1070.001",
        ),
        (
            &[IDENTIFY, "\"exfiltration\"", "35 million"],
            "6: T1041\n7: T1041",
        ),
        (
            &[SUMMARIZE, "\"initial-access\"", "ALZip"],
            r#"{"permissions": ["control of the ALZip update channel"], "files": ["nation.exe"], "information": [], "tools": []}"#,
        ),
        (
            &[SUMMARIZE, "\"execution\"", "Backdoor.Agent.Hza"],
            r#"{"permissions": ["remote control of employee workstations"], "files": ["Backdoor.Agent.Hza"], "information": [], "tools": ["Windows command shell"]}"#,
        ),
        (
            &[SUMMARIZE, "\"defense-evasion\"", "event logs"],
            r#"{"permissions": [], "files": [], "information": [], "tools": []}"#,
        ),
        (
            &[SUMMARIZE, "\"exfiltration\"", "35 million"],
            r#"{"permissions": [], "files": [], "information": ["SK Communications subscriber database", "personal data of 35 million users"], "tools": []}"#,
        ),
        // --- vortex-phish --------------------------------------------------
        (
            &[REWRITE, "Vortex Panda"],
            r#"{
  "sections": [
    {"tactic": "initial-access", "paragraphs": [
      "Vortex Panda sent spearphishing emails with a malicious invoice attachment to finance staff at Meridian Bank.",
      "A finance employee opened the malicious invoice attachment, which dropped the loader VortexDropper.vbs."
    ]},
    {"tactic": "execution", "paragraphs": [
      "VortexDropper.vbs executed a PowerShell one-liner that retrieved the implant from a staging server."
    ]},
    {"tactic": "credential-access", "paragraphs": [
      "The attackers ran Mimikatz on the finance workstation.",
      "The tool harvested domain administrator password hashes from LSASS memory."
    ]},
    {"tactic": "other", "paragraphs": [
      "Meridian Bank is a regional bank serving commercial customers."
    ]}
  ]
}"#,
        ),
        (
            &[EXTRACT, "\"initial-access\"", "Meridian"],
            "1: Vortex Panda | attacker | sent | success | spearphishing emails | email\n\
             1: spearphishing emails ~ targets ~ finance staff\n\
             2: finance employee | victim | opened | success | malicious invoice attachment | file\n\
             2: malicious invoice attachment | file | dropped | success | VortexDropper.vbs | malware",
        ),
        (
            &[EXTRACT, "\"execution\"", "one-liner"],
            "3: VortexDropper.vbs | malware | executed | success | PowerShell one-liner | tool\n\
             3: PowerShell one-liner | tool | retrieved | success | implant | malware",
        ),
        (
            &[EXTRACT, "\"credential-access\"", "Mimikatz"],
            "4: Vortex Panda=The attackers | attacker | ran | success | Mimikatz | tool\n\
             5: Mimikatz=The tool | tool | harvested | success | domain administrator password hashes | information",
        ),
        (
            &[IDENTIFY, "\"initial-access\"", "Meridian"],
            "1: T1566\n1: T1566.001\n2: T1204.002",
        ),
        (&[IDENTIFY, "\"execution\"", "one-liner"], "3: T1059.001"),
        (
            &[IDENTIFY, "\"credential-access\"", "Mimikatz"],
            "4: T1003\n5: T1003.001",
        ),
        (
            &[SUMMARIZE, "\"initial-access\"", "Meridian"],
            r#"{"permissions": ["user-level access to a finance workstation"], "files": ["VortexDropper.vbs"], "information": [], "tools": []}"#,
        ),
        (
            &[SUMMARIZE, "\"execution\"", "one-liner"],
            r#"{"permissions": [], "files": ["implant"], "information": [], "tools": ["PowerShell"]}"#,
        ),
        (
            &[SUMMARIZE, "\"credential-access\"", "Mimikatz"],
            r#"{"permissions": ["domain administrator credentials"], "files": [], "information": ["domain administrator password hashes"], "tools": ["Mimikatz", "Mimikatz"]}"#,
        ),
        // --- cobalt-loader -------------------------------------------------
        (
            &[REWRITE, "CobaltLoader"],
            r#"{
  "sections": [
    {"tactic": "persistence", "paragraphs": [
      "CobaltLoader adds a Registry run key so that it launches at every user logon."
    ]},
    {"tactic": "defense-evasion", "paragraphs": [
      "CobaltLoader is packed with a custom packer that defeats static signatures.",
      "CobaltLoader checks for an attached debugger and exits if one is found."
    ]},
    {"tactic": "other", "paragraphs": [
      "CobaltLoader samples were first uploaded to public scanners in March."
    ]}
  ]
}"#,
        ),
        (
            &[EXTRACT, "\"persistence\"", "run key"],
            "1: CobaltLoader | malware | adds | success | Registry run key | registry-key",
        ),
        (
            &[EXTRACT, "\"defense-evasion\"", "packer"],
            "2: custom packer | tool | packed | success | CobaltLoader=the loader | malware\n\
             3: CobaltLoader | malware | checks | unknown | attached debugger | process",
        ),
        (&[IDENTIFY, "\"persistence\"", "run key"], "1: T1547.001"),
        (
            &[IDENTIFY, "\"defense-evasion\"", "packer"],
            "2: T1027.002\n3: T1622",
        ),
        (
            &[SUMMARIZE, "\"persistence\"", "run key"],
            r#"{"permissions": ["persistent execution at user logon"], "files": [], "information": [], "tools": []}"#,
        ),
        (
            &[SUMMARIZE, "\"defense-evasion\"", "packer"],
            r#"{"permissions": [], "files": [], "information": [], "tools": ["custom packer"]}"#,
        ),
        // --- tech-brief ----------------------------------------------------
        (
            &[REWRITE, "security market outlook"],
            r#"{
  "sections": [
    {"tactic": "other", "paragraphs": [
      "Industry analysts expect enterprise security spending to rise this year.",
      "Two major vendors announced a partnership to share threat indicators."
    ]}
  ]
}"#,
        ),
    ]
}

fn main() {
    let manifest_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let fixture_dir = manifest_dir.join("samples/fixtures");
    let report_dir = manifest_dir.join("samples/reports");

    // Retire stale fixtures; keys change whenever prompts do.
    if fixture_dir.exists() {
        for entry in std::fs::read_dir(&fixture_dir).expect("fixture dir readable") {
            let path = entry.expect("dir entry").path();
            if path.extension().map(|e| e == "txt").unwrap_or(false) {
                std::fs::remove_file(path).expect("stale fixture removed");
            }
        }
    }
    std::fs::create_dir_all(&fixture_dir).expect("fixture dir");

    let out_dir = std::env::temp_dir().join(format!("attackg-record-{}", std::process::id()));

    let config = RunConfig {
        mode: BackendMode::Record,
        fixture_dir: Some(fixture_dir.clone()),
        attack_bundle: manifest_dir.join("data/enterprise-attack.json"),
        out_dir: out_dir.clone(),
        workers: 1,
        ..Default::default()
    };

    let catalog = load_catalog(&config.attack_bundle).expect("bundle loads");
    let backend = Backend::record(
        EndpointConfig {
            base_url: "offline://scripted-model".into(),
            api_key: None,
        },
        &fixture_dir,
        config.model_params(),
    )
    .with_transport(Arc::new(ScriptedModel { rules: rules() }));

    let docs: Vec<PathBuf> = [
        "c5-apt-skhack.txt",
        "vortex-phish.txt",
        "cobalt-loader.txt",
        "tech-brief.txt",
    ]
    .iter()
    .map(|name| report_dir.join(name))
    .collect();

    let manifest = pipeline::run_with(&docs, &config, &catalog, &backend).expect("record run");
    for record in &manifest.docs {
        println!(
            "{}: {}{}",
            record.doc_id,
            record.status,
            record
                .failed_stage
                .as_ref()
                .map(|s| format!(" (at {s}: {})", record.error.as_deref().unwrap_or("?")))
                .unwrap_or_default()
        );
    }
    assert!(!manifest.any_failed(), "recording must complete cleanly");

    let count = std::fs::read_dir(&fixture_dir)
        .expect("fixture dir readable")
        .filter(|e| {
            e.as_ref()
                .map(|e| e.path().extension().map(|x| x == "txt").unwrap_or(false))
                .unwrap_or(false)
        })
        .count();
    println!("{count} fixtures written to {}", fixture_dir.display());
    let _ = std::fs::remove_dir_all(&out_dir);
}
