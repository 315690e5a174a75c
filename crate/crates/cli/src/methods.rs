//! Method names used as report keys.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Rds,
    RdsL2,
    RdsW,
    EigenEmbed,
    Anll,
    Nll,
    Sc,
    RdsS,
    RdsWS,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Rds,
        Method::RdsL2,
        Method::RdsW,
        Method::EigenEmbed,
        Method::Anll,
        Method::Nll,
        Method::Sc,
        Method::RdsS,
        Method::RdsWS,
    ];

    /// Prompt-level scores ranked for hallucination detection.
    pub const PROMPT_LEVEL: [Method; 7] = [
        Method::Rds,
        Method::RdsL2,
        Method::RdsW,
        Method::EigenEmbed,
        Method::Anll,
        Method::Nll,
        Method::Sc,
    ];

    /// Per-sample scores used for best-of-N selection.
    pub const PER_SAMPLE: [Method; 5] = [Method::RdsS, Method::RdsWS, Method::Anll, Method::Nll, Method::Sc];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rds => "rds",
            Method::RdsL2 => "rds_l2",
            Method::RdsW => "rds_w",
            Method::EigenEmbed => "eigen_embed",
            Method::Anll => "anll",
            Method::Nll => "nll",
            Method::Sc => "sc",
            Method::RdsS => "rds_s",
            Method::RdsWS => "rds_w_s",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(
            self,
            Method::Rds | Method::RdsL2 | Method::RdsW | Method::EigenEmbed | Method::RdsS | Method::RdsWS
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// A requested method: built in, or a named column from an external file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodSpec {
    Builtin(Method),
    External(String),
}

impl MethodSpec {
    pub fn name(&self) -> &str {
        match self {
            MethodSpec::Builtin(m) => m.as_str(),
            MethodSpec::External(s) => s,
        }
    }
}

/// Parses a comma list against the methods valid for a subcommand. Other
/// names are accepted only when an external score file is available.
pub fn parse_methods(
    list: Option<&str>,
    allowed: &[Method],
    allow_external: bool,
) -> Result<Vec<MethodSpec>, String> {
    let Some(list) = list else {
        return Ok(allowed.iter().copied().map(MethodSpec::Builtin).collect());
    };
    let mut out: Vec<MethodSpec> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let spec = match name.parse::<Method>() {
            Ok(m) if allowed.contains(&m) => MethodSpec::Builtin(m),
            Ok(m) => {
                let valid: Vec<&str> = allowed.iter().map(|m| m.as_str()).collect();
                return Err(format!("method `{m}` does not apply here (use one of {})", valid.join(", ")));
            }
            Err(_) if allow_external => MethodSpec::External(name.to_string()),
            Err(e) => return Err(format!("{e}; pass --external to use scores computed elsewhere")),
        };
        if !out.contains(&spec) {
            out.push(spec);
        }
    }
    if out.is_empty() {
        return Err("no methods selected".into());
    }
    Ok(out)
}
