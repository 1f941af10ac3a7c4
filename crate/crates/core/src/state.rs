//! System state, per-agent observations and joint actions.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// `J x M` matrix of gain-level indices, row-major by traditional device.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<usize>,
}

impl LevelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged level matrix");
        Self {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, j: usize, m: usize) -> usize {
        self.data[j * self.cols + m]
    }

    pub fn set(&mut self, j: usize, m: usize, level: usize) {
        self.data[j * self.cols + m] = level;
    }

    pub fn column(&self, m: usize) -> Vec<usize> {
        (0..self.rows).map(|j| self.get(j, m)).collect()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.data
    }
}

/// `(x(t), G(t), b(t))`: AoII per monitor, gain levels, channel release times.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub aoii: Vec<u64>,
    pub gains: LevelMatrix,
    pub release: Vec<u32>,
}

impl SystemState {
    /// Zero AoII, free channels, given gains.
    pub fn reset(num_monitors: usize, gains: LevelMatrix) -> Self {
        let m = gains.cols();
        Self {
            aoii: vec![0; num_monitors],
            gains,
            release: vec![0; m],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.release.len()
    }

    /// Checks shapes and ranges against a configuration.
    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        let (i, j, m) = (cfg.num_monitors(), cfg.num_traffics(), cfg.num_channels());
        if self.aoii.len() != i {
            return Err(Error::DimensionMismatch {
                what: "aoii vector",
                expected: i,
                got: self.aoii.len(),
            });
        }
        if self.release.len() != m {
            return Err(Error::DimensionMismatch {
                what: "release vector",
                expected: m,
                got: self.release.len(),
            });
        }
        if self.gains.rows() != j || self.gains.cols() != m {
            return Err(Error::DimensionMismatch {
                what: "gain matrix",
                expected: j * m,
                got: self.gains.rows() * self.gains.cols(),
            });
        }
        let max_b = cfg.max_release();
        if let Some(&b) = self.release.iter().find(|&&b| b > max_b) {
            return Err(Error::InvalidConfig(format!(
                "release time {b} exceeds max T_j - 1 = {max_b}"
            )));
        }
        for jj in 0..j {
            for mm in 0..m {
                let levels = cfg.gain_chain(jj, mm).num_levels();
                let g = self.gains.get(jj, mm);
                if g >= levels {
                    return Err(Error::IndexOutOfRange {
                        what: "gain level",
                        index: g,
                        len: levels,
                    });
                }
            }
        }
        Ok(())
    }
}

/// What agent `m` sees: the full AoII vector, its own gain column and its own
/// release time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentObservation {
    pub aoii: Vec<u64>,
    pub gains_col: Vec<usize>,
    pub release_m: u32,
}

impl AgentObservation {
    /// `I + J + 1`.
    pub fn dim(&self) -> usize {
        self.aoii.len() + self.gains_col.len() + 1
    }
}

/// Observation derivation: projects the global state onto channel `m`'s view.
pub fn project_observation(state: &SystemState, m: usize) -> Result<AgentObservation> {
    if m >= state.num_channels() {
        return Err(Error::IndexOutOfRange {
            what: "channel",
            index: m,
            len: state.num_channels(),
        });
    }
    Ok(AgentObservation {
        aoii: state.aoii.clone(),
        gains_col: state.gains.column(m),
        release_m: state.release[m],
    })
}

/// True iff channel `m` may start a new transmission (`b_m = 0`).
pub fn feasible_mask(state: &SystemState, m: usize) -> bool {
    state.release[m] == 0
}

/// Joint action: one entry per channel in `{0, ..., I+J}` with the global
/// device numbering (`0` = start nothing).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionVector(pub Vec<usize>);

impl ActionVector {
    pub fn idle(num_channels: usize) -> Self {
        Self(vec![0; num_channels])
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    /// Checks `b_m > 0 => a_m = 0` and the entry range.
    pub fn check_feasible(&self, state: &SystemState, num_devices: usize) -> Result<()> {
        if self.0.len() != state.num_channels() {
            return Err(Error::DimensionMismatch {
                what: "action vector",
                expected: state.num_channels(),
                got: self.0.len(),
            });
        }
        for (m, (&a, &b)) in self.0.iter().zip(&state.release).enumerate() {
            if a > num_devices {
                return Err(Error::IndexOutOfRange {
                    what: "action entry",
                    index: a,
                    len: num_devices + 1,
                });
            }
            if b > 0 && a != 0 {
                return Err(Error::ConstraintViolation {
                    channel: m,
                    release: b,
                    action: a,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_state() -> SystemState {
        SystemState {
            aoii: vec![3, 0],
            gains: LevelMatrix::from_rows(vec![vec![5, 7]]),
            release: vec![0, 4],
        }
    }

    #[test]
    fn projects_second_channel() {
        let obs = project_observation(&example_state(), 1).unwrap();
        assert_eq!(obs.aoii, vec![3, 0]);
        assert_eq!(obs.gains_col, vec![7]);
        assert_eq!(obs.release_m, 4);
        assert_eq!(obs.dim(), 2 + 1 + 1);
    }

    #[test]
    fn projects_first_channel() {
        let obs = project_observation(&example_state(), 0).unwrap();
        assert_eq!(
            obs,
            AgentObservation {
                aoii: vec![3, 0],
                gains_col: vec![5],
                release_m: 0
            }
        );
    }

    #[test]
    fn projection_out_of_range() {
        assert!(matches!(
            project_observation(&example_state(), 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn observations_cover_state() {
        let s = SystemState {
            aoii: vec![1, 2, 3],
            gains: LevelMatrix::from_rows(vec![vec![0, 1, 2], vec![3, 4, 5]]),
            release: vec![2, 0, 1],
        };
        let mut gains = LevelMatrix::zeros(2, 3);
        let mut release = vec![0; 3];
        for m in 0..3 {
            let o = project_observation(&s, m).unwrap();
            assert_eq!(o.aoii, s.aoii);
            for (j, g) in o.gains_col.iter().enumerate() {
                gains.set(j, m, *g);
            }
            release[m] = o.release_m;
        }
        assert_eq!(gains, s.gains);
        assert_eq!(release, s.release);
    }

    #[test]
    fn mask_follows_release() {
        let mut s = example_state();
        assert!(feasible_mask(&s, 0));
        assert!(!feasible_mask(&s, 1));
        s.release = vec![0, 0];
        assert!((0..2).all(|m| feasible_mask(&s, m)));
        s.release[0] = 3;
        assert!(!feasible_mask(&s, 0));
    }

    #[test]
    fn infeasible_action_detected() {
        let s = example_state();
        assert!(ActionVector(vec![1, 0]).check_feasible(&s, 3).is_ok());
        assert!(matches!(
            ActionVector(vec![0, 2]).check_feasible(&s, 3),
            Err(Error::ConstraintViolation { channel: 1, .. })
        ));
    }
}
