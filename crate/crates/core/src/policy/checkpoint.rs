//! Policy checkpoints.
//!
//! A checkpoint is a UTF-8 text header followed by the raw parameter
//! vector:
//!
//! ```text
//! codesign-policy v1
//! obs_dim 4
//! design_dim 1
//! head categorical 2
//! hidden 64 64 64
//! layer policy 0 5 64
//! ...
//! design pole_length 0.1 3
//! params 9155
//! end
//! <params x 8 bytes, f64 little-endian>
//! ```
//!
//! `layer <net> <offset> <input> <output>` lines describe each dense block
//! (weights then biases); `log_std <offset> <dim>` appears for Gaussian
//! heads. `design` lines record the bounds used to normalise the design
//! input and are optional.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::universal::{Head, UniversalPolicy};
use crate::envs::{DesignDim, DesignSpace};
use crate::error::{Error, Result};

const MAGIC: &str = "codesign-policy v1";

pub fn write_checkpoint<W: Write>(
    out: &mut W,
    policy: &UniversalPolicy,
    space: Option<&DesignSpace>,
) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("obs_dim {}\n", policy.obs_dim()));
    header.push_str(&format!("design_dim {}\n", policy.design_dim()));
    match policy.head() {
        Head::Categorical(n) => header.push_str(&format!("head categorical {n}\n")),
        Head::Gaussian(n) => header.push_str(&format!("head gaussian {n}\n")),
    }
    let hidden: Vec<String> = policy.hidden().iter().map(|h| h.to_string()).collect();
    header.push_str(&format!("hidden {}\n", hidden.join(" ")));
    for (name, net) in [("policy", policy.policy_net()), ("value", policy.value_net())] {
        for l in net.layers() {
            header.push_str(&format!("layer {name} {} {} {}\n", l.offset, l.input, l.output));
        }
    }
    if let Some(r) = policy.log_std_range() {
        header.push_str(&format!("log_std {} {}\n", r.start, r.len()));
    }
    if let Some(space) = space {
        for d in space.dims() {
            header.push_str(&format!("design {} {} {}\n", d.name, d.lower, d.upper));
        }
    }
    header.push_str(&format!("params {}\nend\n", policy.params().len()));
    out.write_all(header.as_bytes())?;
    let mut bytes = Vec::with_capacity(policy.params().len() * 8);
    for p in policy.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, policy: &UniversalPolicy, space: Option<&DesignSpace>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    write_checkpoint(&mut file, policy, space)?;
    file.flush()?;
    Ok(())
}

fn parse_num<T: std::str::FromStr>(s: Option<&str>, what: &str) -> Result<T> {
    s.and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad or missing {what}")))
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<(UniversalPolicy, Option<DesignSpace>)> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Format(format!("not a policy checkpoint: {:?}", line.trim_end())));
    }
    let mut obs_dim = None;
    let mut design_dim = None;
    let mut head = None;
    let mut hidden = None;
    let mut layers = Vec::new();
    let mut dims = Vec::new();
    let mut n_params = None;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Format("checkpoint header not terminated".into()));
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("end") => break,
            Some("obs_dim") => obs_dim = Some(parse_num::<usize>(it.next(), "obs_dim")?),
            Some("design_dim") => design_dim = Some(parse_num::<usize>(it.next(), "design_dim")?),
            Some("head") => {
                let kind = it.next();
                let n = parse_num::<usize>(it.next(), "head width")?;
                head = Some(match kind {
                    Some("categorical") => Head::Categorical(n),
                    Some("gaussian") => Head::Gaussian(n),
                    other => return Err(Error::Format(format!("unknown head {other:?}"))),
                });
            }
            Some("hidden") => {
                hidden = Some(
                    it.map(|v| parse_num::<usize>(Some(v), "hidden width"))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            Some("layer") => {
                let name = it.next().unwrap_or_default().to_string();
                let off = parse_num::<usize>(it.next(), "layer offset")?;
                let i = parse_num::<usize>(it.next(), "layer input")?;
                let o = parse_num::<usize>(it.next(), "layer output")?;
                layers.push((name, off, i, o));
            }
            Some("log_std") => {}
            Some("design") => {
                let name = it.next().unwrap_or_default().to_string();
                let lower = parse_num::<f64>(it.next(), "design lower")?;
                let upper = parse_num::<f64>(it.next(), "design upper")?;
                dims.push(DesignDim { name, lower, upper });
            }
            Some("params") => n_params = Some(parse_num::<usize>(it.next(), "params")?),
            Some(other) => return Err(Error::Format(format!("unknown header key `{other}`"))),
            None => {}
        }
    }
    let missing = |k: &str| Error::Format(format!("checkpoint header lacks `{k}`"));
    let obs_dim = obs_dim.ok_or_else(|| missing("obs_dim"))?;
    let design_dim = design_dim.ok_or_else(|| missing("design_dim"))?;
    let head = head.ok_or_else(|| missing("head"))?;
    let hidden = hidden.ok_or_else(|| missing("hidden"))?;
    let n_params = n_params.ok_or_else(|| missing("params"))?;

    let mut policy = UniversalPolicy::zeros(obs_dim, design_dim, &hidden, head);
    let expected: Vec<(String, usize, usize, usize)> = [("policy", policy.policy_net()), ("value", policy.value_net())]
        .iter()
        .flat_map(|(name, net)| {
            net.layers()
                .iter()
                .map(move |l| (name.to_string(), l.offset, l.input, l.output))
        })
        .collect();
    if layers != expected || n_params != policy.params().len() {
        return Err(Error::Format("layer table does not match the declared architecture".into()));
    }
    let mut bytes = vec![0u8; n_params * 8];
    reader.read_exact(&mut bytes)?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after parameter block".into()));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    policy.set_params(params)?;
    let space = if dims.is_empty() { None } else { Some(DesignSpace::new(dims)?) };
    Ok((policy, space))
}

pub fn load_checkpoint(path: &Path) -> Result<(UniversalPolicy, Option<DesignSpace>)> {
    read_checkpoint(fs::File::open(path)?)
}
