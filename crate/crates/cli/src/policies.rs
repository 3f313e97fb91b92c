use std::str::FromStr;

use anyhow::{bail, Error, Result};
use aoi_coopt::baselines::{BaselineSpec, MafLength};
use aoi_coopt::sim::{MultiKind, SinglePolicy};
use aoi_coopt::tifl::TiflPolicy;
use aoi_coopt::tvfl::TvflPolicy;
use aoi_coopt::GammaTable;

#[derive(Debug, Clone, PartialEq)]
pub enum SingleChoice {
    Tifl,
    Tvfl,
    Baseline(BaselineSpec),
}

impl FromStr for SingleChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tifl" => Ok(Self::Tifl),
            "tvfl" => Ok(Self::Tvfl),
            _ => match s.parse::<BaselineSpec>()? {
                BaselineSpec::Maf(_) => bail!("{s:?} is a multi-source policy"),
                b => Ok(Self::Baseline(b)),
            },
        }
    }
}

impl SingleChoice {
    /// Panics if the solved policy the choice needs is missing.
    pub fn policy<'a>(
        &self,
        tifl: Option<&'a TiflPolicy>,
        tvfl: Option<&'a TvflPolicy>,
        gamma: &'a GammaTable,
    ) -> SinglePolicy<'a> {
        match self {
            Self::Tifl => SinglePolicy::Tifl { policy: tifl.expect("solved TIFL policy"), gamma },
            Self::Tvfl => SinglePolicy::Tvfl(tvfl.expect("solved TVFL policy")),
            Self::Baseline(b) => SinglePolicy::Baseline(*b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MultiChoice {
    NetGain,
    LowerBound,
    Maf(MafLength),
}

impl FromStr for MultiChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "netgain" => Ok(Self::NetGain),
            "lowerbound" => Ok(Self::LowerBound),
            _ => match s.parse::<BaselineSpec>() {
                Ok(BaselineSpec::Maf(m)) => Ok(Self::Maf(m)),
                _ => bail!("unknown policy {s:?}"),
            },
        }
    }
}

impl MultiChoice {
    pub fn needs_policy(&self) -> bool {
        !matches!(self, Self::Maf(_))
    }

    pub fn kind(&self) -> MultiKind {
        match self {
            Self::NetGain => MultiKind::NetGain,
            Self::LowerBound => MultiKind::RelaxedLowerBound,
            Self::Maf(m) => MultiKind::Maf(*m),
        }
    }
}

/// Splits `tifl,zero-wait:l=1,periodic:tp=4,l=1` into policy names; a bare
/// `key=value` token continues the previous policy's argument list.
pub fn split_policies(list: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for tok in list.split(',').map(str::trim) {
        if tok.is_empty() {
            bail!("empty policy in {list:?}");
        }
        match out.last_mut() {
            Some(prev) if !tok.contains(':') && tok.contains('=') && prev.contains(':') => {
                prev.push(',');
                prev.push_str(tok);
            }
            _ => out.push(tok.to_string()),
        }
    }
    Ok(out)
}
