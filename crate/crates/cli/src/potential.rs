use std::collections::BTreeMap;
use std::sync::Arc;

use uld_core::potentials::{
    AdversarialFamily, BetaIndex, FunctionClass, Potential, Quadratic, Separable,
    SmoothNonQuadratic, SmoothProfile,
};

use crate::CliError;

/// A potential built from a `kind:key=value,...` string.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub potential: Arc<dyn Potential>,
    pub lip: f64,
    pub text: String,
}

impl PotentialSpec {
    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    /// Lower Hessian bound, used as `ell` for prefactor checks.
    pub fn ell(&self) -> f64 {
        self.potential.hessian_bounds().0
    }
}

fn config_err(msg: String) -> CliError {
    CliError::Config(format!("potential: {msg}"))
}

struct Fields<'a> {
    kind: &'a str,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn parse(text: &'a str) -> Result<Self, CliError> {
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut map = BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| config_err(format!("expected key=value, got `{part}`")))?;
            if map.insert(k.trim(), v.trim()).is_some() {
                return Err(config_err(format!("key `{}` given twice", k.trim())));
            }
        }
        Ok(Fields {
            kind: kind.trim(),
            map,
        })
    }

    fn only(&self, allowed: &[&str]) -> Result<(), CliError> {
        match self.map.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(config_err(format!("unknown key `{k}` for `{}`", self.kind))),
            None => Ok(()),
        }
    }

    fn raw(&self, key: &str) -> Result<&'a str, CliError> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| config_err(format!("missing key `{key}` for `{}`", self.kind)))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| config_err(format!("cannot parse `{key}` = `{raw}`")))
    }

    fn num_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        if self.map.contains_key(key) {
            self.num(key)
        } else {
            Ok(default)
        }
    }
}

/// Parse a potential description such as `quadratic:u=1,L=4,d=2`,
/// `separable:u=1|2|3,L=4`, `smooth:ell=1,L=4,d=2,profile=sine` or
/// `adversarial:ell=1,L=4,u=2.5,ur=3,Cx=0.02,N=8,beta=ones`.
pub fn parse_potential(text: &str) -> Result<PotentialSpec, CliError> {
    let f = Fields::parse(text)?;
    let (potential, lip): (Arc<dyn Potential>, f64) = match f.kind {
        "quadratic" => {
            f.only(&["u", "L", "d"])?;
            let lip: f64 = f.num("L")?;
            let p = Quadratic::new(f.num("u")?, f.num_or("d", 1)?)?;
            check_class(&p, lip)?;
            (Arc::new(p), lip)
        }
        "separable" => {
            f.only(&["u", "L"])?;
            let lip: f64 = f.num("L")?;
            let parts = f
                .raw("u")?
                .split('|')
                .map(|s| {
                    let u: f64 = s
                        .trim()
                        .parse()
                        .map_err(|_| config_err(format!("cannot parse curvature `{s}`")))?;
                    Ok(Arc::new(Quadratic::new(u, 1)?) as Arc<dyn Potential>)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let p = Separable::new(parts)?;
            check_class(&p, lip)?;
            (Arc::new(p), lip)
        }
        "smooth" => {
            f.only(&["ell", "L", "d", "profile"])?;
            let lip: f64 = f.num("L")?;
            let profile = match f.map.get("profile").copied().unwrap_or("sine") {
                "sine" => SmoothProfile::Sine,
                "zero" => SmoothProfile::Zero,
                other => return Err(config_err(format!("unknown profile `{other}`"))),
            };
            let p = SmoothNonQuadratic::new(f.num("ell")?, lip, f.num_or("d", 1)?, profile)?;
            (Arc::new(p), lip)
        }
        "adversarial" => {
            f.only(&["ell", "L", "u", "ur", "Cx", "N", "beta"])?;
            let lip: f64 = f.num("L")?;
            let class = FunctionClass::new(f.num("ell")?, lip)?;
            let n: usize = f.num("N")?;
            let fam = AdversarialFamily::with_upper_curvature(
                &class,
                f.num("u")?,
                f.num("ur")?,
                f.num("Cx")?,
                n,
            )?;
            let beta = match f.map.get("beta").copied().unwrap_or("zeros") {
                "zeros" => BetaIndex::zeros(n),
                "ones" => BetaIndex::ones(n),
                bits => {
                    let parsed = bits
                        .chars()
                        .map(|c| match c {
                            '0' => Ok(false),
                            '1' => Ok(true),
                            _ => Err(config_err(format!("`beta` must be zeros, ones or a bit string, got `{bits}`"))),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    BetaIndex::from_bits(n, parsed)?
                }
            };
            (Arc::new(fam.potential(beta)?), lip)
        }
        other => {
            return Err(config_err(format!(
                "unknown kind `{other}` (expected quadratic, separable, smooth or adversarial)"
            )))
        }
    };
    Ok(PotentialSpec {
        potential,
        lip,
        text: text.trim().to_string(),
    })
}

fn check_class(p: &dyn Potential, lip: f64) -> Result<(), CliError> {
    let (lo, hi) = p.hessian_bounds();
    if hi > lip || lo <= 0.0 {
        return Err(config_err(format!(
            "curvatures [{lo}, {hi}] must lie in (0, L] with L = {lip}"
        )));
    }
    Ok(())
}
