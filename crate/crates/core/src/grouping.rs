//! RS-CMD group formation from the strength-weighted channel similarity.
//!
//! Every user decodes its own common message. On top of that, the pair
//! `(i, j)` with the largest extended similarity lets user `i` decode the
//! common message of user `j`, and the process repeats until each user holds
//! `D` decoding layers or no candidate pair is left.

use std::io::Write;

use crate::error::{invalid, Result};
use crate::scenario::ChannelMatrix;

/// `R`, the normalized strengths and `diag(strengths) * R`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrices {
    pub r: Vec<Vec<f64>>,
    pub h_norm: Vec<f64>,
    pub r_ext: Vec<Vec<f64>>,
}

impl SimilarityMatrices {
    pub fn from_channel(channel: &ChannelMatrix) -> Result<Self> {
        let r = channel_similarity(channel)?;
        let h_norm = normalized_strengths(channel)?;
        let r_ext = extended_similarity(&r, &h_norm)?;
        Ok(SimilarityMatrices { r, h_norm, r_ext })
    }
}

fn check_columns(channel: &ChannelMatrix) -> Result<Vec<f64>> {
    let norms: Vec<f64> = (0..channel.n_users())
        .map(|k| channel.column_norm_sqr(k))
        .collect();
    if let Some(k) = norms.iter().position(|&n| !(n > 0.0)) {
        return invalid(format!("channel of user {k} is zero"));
    }
    Ok(norms)
}

/// `|h_k^H h_j| / (||h_k|| ||h_j||)` for every pair of users.
pub fn channel_similarity(channel: &ChannelMatrix) -> Result<Vec<Vec<f64>>> {
    let norms = check_columns(channel)?;
    let k = channel.n_users();
    let mut r = vec![vec![0.0; k]; k];
    for a in 0..k {
        r[a][a] = 1.0;
        for b in (a + 1)..k {
            let inner: num_complex::Complex64 = channel
                .column(a)
                .iter()
                .zip(channel.column(b))
                .map(|(x, y)| x.conj() * y)
                .sum();
            let v = (inner.norm() / (norms[a] * norms[b]).sqrt()).min(1.0);
            r[a][b] = v;
            r[b][a] = v;
        }
    }
    Ok(r)
}

/// `||h_k||^2 / max_j ||h_j||^2`.
pub fn normalized_strengths(channel: &ChannelMatrix) -> Result<Vec<f64>> {
    let norms = check_columns(channel)?;
    let max = norms.iter().cloned().fold(f64::MIN, f64::max);
    Ok(norms.iter().map(|n| n / max).collect())
}

/// Scales row `i` of `r` by `h_norm[i]`.
pub fn extended_similarity(r: &[Vec<f64>], h_norm: &[f64]) -> Result<Vec<Vec<f64>>> {
    if r.len() != h_norm.len() || r.iter().any(|row| row.len() != h_norm.len()) {
        return invalid(format!(
            "similarity matrix and strength vector disagree in size ({} vs {})",
            r.len(),
            h_norm.len()
        ));
    }
    Ok(r.iter()
        .zip(h_norm)
        .map(|(row, s)| row.iter().map(|v| v * s).collect())
        .collect())
}

/// Decode sets of an RS-CMD grouping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupingResult {
    /// `decoded_by[k]`: users decoding the common message of `k` (ascending).
    decoded_by: Vec<Vec<usize>>,
    /// `decodes[k]`: owners of the common messages user `k` decodes, in SIC
    /// order. The own message is always last.
    decodes: Vec<Vec<usize>>,
    decode_layers: usize,
    /// Accepted `(decoder, owner)` pairs in selection order.
    assignments: Vec<(usize, usize)>,
}

impl GroupingResult {
    /// Builds a grouping from explicit SIC orders and checks its invariants.
    pub fn from_decode_orders(decodes: Vec<Vec<usize>>, decode_layers: usize) -> Result<Self> {
        let k = decodes.len();
        let mut decoded_by = vec![Vec::new(); k];
        for (user, order) in decodes.iter().enumerate() {
            for &owner in order {
                if owner >= k {
                    return invalid(format!("user {user} decodes unknown owner {owner}"));
                }
                decoded_by[owner].push(user);
            }
        }
        for m in &mut decoded_by {
            m.sort_unstable();
        }
        let g = GroupingResult {
            decoded_by,
            decodes,
            decode_layers,
            assignments: Vec::new(),
        };
        g.validate()?;
        Ok(g)
    }

    /// Replaces the recorded `(decoder, owner)` selection sequence.
    pub fn with_assignments(mut self, assignments: Vec<(usize, usize)>) -> Self {
        self.assignments = assignments;
        self
    }

    /// Every user decodes only its own common message.
    pub fn singletons(n_users: usize, decode_layers: usize) -> Self {
        GroupingResult {
            decoded_by: (0..n_users).map(|k| vec![k]).collect(),
            decodes: (0..n_users).map(|k| vec![k]).collect(),
            decode_layers,
            assignments: Vec::new(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.decodes.len()
    }

    pub fn decode_layers(&self) -> usize {
        self.decode_layers
    }

    pub fn decoded_by(&self, k: usize) -> &[usize] {
        &self.decoded_by[k]
    }

    pub fn decodes(&self, k: usize) -> &[usize] {
        &self.decodes[k]
    }

    pub fn assignments(&self) -> &[(usize, usize)] {
        &self.assignments
    }

    pub fn is_decoded_by(&self, owner: usize, user: usize) -> bool {
        self.decodes[user].contains(&owner)
    }

    /// Common messages still present at `user` while it decodes `owner`:
    /// the members of `Z_user` that come after `owner` in the SIC order.
    pub fn pending_after(&self, user: usize, owner: usize) -> Option<&[usize]> {
        let order = &self.decodes[user];
        order.iter().position(|&o| o == owner).map(|p| &order[p + 1..])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.decodes.len();
        if self.decoded_by.len() != k || self.decode_layers == 0 {
            return invalid("malformed grouping");
        }
        for user in 0..k {
            let z = &self.decodes[user];
            if z.last() != Some(&user) {
                return invalid(format!("user {user} must decode its own common message last"));
            }
            if z.len() > self.decode_layers {
                return invalid(format!("user {user} exceeds {} decoding layers", self.decode_layers));
            }
            let mut sorted = z.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != z.len() {
                return invalid(format!("user {user} decodes a message twice"));
            }
            for &owner in z {
                if !self.decoded_by[owner].contains(&user) {
                    return invalid("decode sets are not dual");
                }
            }
        }
        for owner in 0..k {
            for &user in &self.decoded_by[owner] {
                if !self.decodes[user].contains(&owner) {
                    return invalid("decode sets are not dual");
                }
            }
        }
        Ok(())
    }

    /// `user,sic_order,decoded_by` with `;`-separated lists.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "sic_order", "decoded_by"])?;
        for k in 0..self.n_users() {
            w.write_record([k.to_string(), join(&self.decodes[k]), join(&self.decoded_by[k])])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Iterative argmax pairing over the off-diagonal of `r_ext`.
///
/// A selected pair `(i, j)` is accepted when user `i` still has a free layer,
/// does not already decode `j`, and `j` does not already decode `i`. The
/// selected entry is zeroed either way. Ties go to the smallest row, then the
/// smallest column.
pub fn form_groups(r_ext: &[Vec<f64>], decode_layers: usize) -> Result<GroupingResult> {
    let k = r_ext.len();
    if r_ext.iter().any(|row| row.len() != k) {
        return invalid("extended similarity matrix must be square");
    }
    if decode_layers == 0 {
        return invalid("decode_layers must be at least 1");
    }
    if r_ext.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("extended similarity matrix has non-finite entries");
    }

    let mut work: Vec<Vec<f64>> = r_ext.to_vec();
    let mut decodes: Vec<Vec<usize>> = (0..k).map(|u| vec![u]).collect();
    let mut assignments = Vec::new();

    loop {
        if decodes.iter().all(|z| z.len() >= decode_layers) {
            break;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, row) in work.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j && v > 0.0 && best.map_or(true, |(_, _, b)| v > b) {
                    best = Some((i, j, v));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        work[i][j] = 0.0;

        if decodes[i].len() < decode_layers && !decodes[i].contains(&j) && !decodes[j].contains(&i) {
            decodes[i].insert(0, j);
            assignments.push((i, j));
        }
    }

    Ok(GroupingResult::from_decode_orders(decodes, decode_layers)?.with_assignments(assignments))
}

/// Convenience: similarity matrices and groups straight from a channel.
pub fn group_users(channel: &ChannelMatrix, decode_layers: usize) -> Result<GroupingResult> {
    let sim = SimilarityMatrices::from_channel(channel)?;
    form_groups(&sim.r_ext, decode_layers)
}
