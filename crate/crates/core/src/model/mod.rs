//! Siamese encoder with a semantic decoder (pre image) and a change
//! decoder (pre/post pair), plus the optional attention gates, alignment
//! modules and focal damage loss.
//!
//! Parameter names are prefixed by group: `enc.`, `sem.`, `chg.`, `head.`
//! form the base network; `ag_b.`, `ag_d.` and `align.` hold the optional
//! modules.

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::blocks::{alignment_forward, attention_gate, AlignmentModule, AttentionGate};
use crate::dataio::Mask;
use crate::error::{Error, Result};
use crate::losses::{building_head_loss, damage_head_loss, FocalConfig, HeadLoss, LossWeights};
use crate::metrics::argmax_masks;
use crate::numerics::{default_groups, Conv2d, GroupNorm, Init, ParamId, ParamStore, Tape, Tensor, Var};

/// Spatial sizes must be multiples of this (four stride-2 stages).
pub const SIZE_DIVISOR: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stage_channels: [usize; 4],
    pub enable_focal: bool,
    pub enable_ag_building: bool,
    pub enable_ag_damage: bool,
    pub enable_align: bool,
    pub input_channels: usize,
    pub loc_classes: usize,
    pub dmg_classes: usize,
    pub focal: FocalConfig,
    pub loss_weights: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage_channels: [16, 32, 64, 128],
            enable_focal: false,
            enable_ag_building: false,
            enable_ag_damage: false,
            enable_align: false,
            input_channels: 3,
            loc_classes: 2,
            dmg_classes: 5,
            focal: FocalConfig::default(),
            loss_weights: LossWeights::default(),
        }
    }
}

/// Which optional modules are on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Enhancements {
    pub focal: bool,
    pub ag_building: bool,
    pub ag_damage: bool,
    pub align: bool,
}

impl Enhancements {
    /// The variant list in table order.
    pub const SWEEP: [Enhancements; 10] = [
        Enhancements::new(false, false, false, false),
        Enhancements::new(false, true, true, false),
        Enhancements::new(false, true, false, false),
        Enhancements::new(false, false, false, true),
        Enhancements::new(true, false, false, false),
        Enhancements::new(true, true, false, false),
        Enhancements::new(true, true, true, false),
        Enhancements::new(true, false, false, true),
        Enhancements::new(true, true, false, true),
        Enhancements::new(true, true, true, true),
    ];

    pub const fn new(focal: bool, ag_building: bool, ag_damage: bool, align: bool) -> Self {
        Enhancements {
            focal,
            ag_building,
            ag_damage,
            align,
        }
    }

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.focal {
            parts.push("FOCAL");
        }
        if self.align {
            parts.push("ALIGN");
        }
        match (self.ag_building, self.ag_damage) {
            (true, true) => parts.push("AGBD"),
            (true, false) => parts.push("AGB"),
            (false, true) => parts.push("AGD"),
            (false, false) => {}
        }
        if parts.is_empty() {
            "Baseline".into()
        } else {
            parts.join(" + ")
        }
    }

    /// Inverse of [`Enhancements::name`]; token order is free.
    pub fn parse(name: &str) -> Result<Self> {
        let mut e = Enhancements::default();
        if name.trim() == "Baseline" {
            return Ok(e);
        }
        for tok in name.split('+').map(str::trim) {
            match tok {
                "FOCAL" => e.focal = true,
                "ALIGN" => e.align = true,
                "AGB" => e.ag_building = true,
                "AGD" => e.ag_damage = true,
                "AGBD" => {
                    e.ag_building = true;
                    e.ag_damage = true;
                }
                _ => return Err(Error::config(format!("unknown variant token {tok:?} in {name:?}"))),
            }
        }
        Ok(e)
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.stage_channels;
        if c[0] == 0 || c.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(format!("stage widths must be positive and strictly increasing, got {c:?}")));
        }
        if self.input_channels == 0 {
            return Err(Error::config("input_channels must be positive"));
        }
        if self.loc_classes != 2 || self.dmg_classes != 5 {
            return Err(Error::config(format!(
                "heads must have 2 and 5 classes, got {} and {}",
                self.loc_classes, self.dmg_classes
            )));
        }
        self.focal.validate()?;
        self.loss_weights.validate()
    }

    pub fn enhancements(&self) -> Enhancements {
        Enhancements {
            focal: self.enable_focal,
            ag_building: self.enable_ag_building,
            ag_damage: self.enable_ag_damage,
            align: self.enable_align,
        }
    }

    pub fn with_enhancements(mut self, e: Enhancements) -> Self {
        self.enable_focal = e.focal;
        self.enable_ag_building = e.ag_building;
        self.enable_ag_damage = e.ag_damage;
        self.enable_align = e.align;
        self
    }

    /// Focal settings used by the damage loss: the configured ones under
    /// FOCAL, the cross-entropy special case otherwise.
    pub fn effective_focal(&self) -> FocalConfig {
        if self.enable_focal {
            self.focal.clone()
        } else {
            FocalConfig::plain()
        }
    }
}

pub fn variant_name(cfg: &ModelConfig) -> String {
    cfg.enhancements().name()
}

/// conv → GN → ReLU.
#[derive(Clone, Debug)]
struct ConvGnRelu {
    conv: Conv2d,
    gn: GroupNorm,
}

impl ConvGnRelu {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, seed: u64) -> Result<Self> {
        Ok(ConvGnRelu {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 3, 1, false, Init::KaimingNormal, seed)?,
            gn: GroupNorm::new(store, &format!("{name}.gn"), cout, default_groups(cout))?,
        })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.gn.forward(tape, store, y)?;
        Ok(tape.relu(y))
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    down: Conv2d,
    body: ConvGnRelu,
}

/// Outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `B×2×H×W` building logits.
    pub loc: Var,
    /// `B×5×H×W` damage logits.
    pub dmg: Var,
    /// Attention maps `(name, B×1×h×w)` of the active gates, coarse to fine.
    pub attention: Vec<(String, Var)>,
    /// Per-stage flows `B×2×h×w` when alignment is on.
    pub flows: Vec<Var>,
}

/// Loss terms of both heads.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub total: Var,
    pub building: HeadLoss,
    pub damage: HeadLoss,
}

/// Parameter counts per module group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub base: usize,
    pub ag_building: usize,
    pub ag_damage: usize,
    pub align: usize,
    pub total: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    seed: u64,
    store: ParamStore,
    encoder: Vec<EncoderStage>,
    /// Semantic decoder fusions for stages 3, 2, 1.
    sem: Vec<ConvGnRelu>,
    /// Temporal fusion of pre/post features per stage 1..4.
    chg_fuse: Vec<ConvGnRelu>,
    /// Change decoder fusions for stages 3, 2, 1.
    chg: Vec<ConvGnRelu>,
    loc_head: Conv2d,
    dmg_head: Conv2d,
    ag_b: Option<Vec<AttentionGate>>,
    ag_d: Option<Vec<AttentionGate>>,
    align: Option<Vec<AlignmentModule>>,
}

const GROUPS: [&str; 3] = ["ag_b.", "ag_d.", "align."];

impl Model {
    /// Builds a model. Each parameter's initial value depends only on
    /// `seed` and its name.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.stage_channels;
        let mut store = ParamStore::new();
        let mut encoder = Vec::new();
        let mut cin = cfg.input_channels;
        for (k, &ck) in c.iter().enumerate() {
            let name = format!("enc.s{}", k + 1);
            encoder.push(EncoderStage {
                down: Conv2d::new(&mut store, &format!("{name}.down"), cin, ck, 3, 2, true, Init::KaimingNormal, seed)?,
                body: ConvGnRelu::new(&mut store, &format!("{name}.body"), ck, ck, seed)?,
            });
            cin = ck;
        }
        let mut sem = Vec::new();
        let mut chg = Vec::new();
        for k in (0..3).rev() {
            sem.push(ConvGnRelu::new(&mut store, &format!("sem.s{}", k + 1), c[k + 1] + c[k], c[k], seed)?);
            chg.push(ConvGnRelu::new(&mut store, &format!("chg.s{}", k + 1), c[k + 1] + c[k], c[k], seed)?);
        }
        let chg_fuse = (0..4)
            .map(|k| ConvGnRelu::new(&mut store, &format!("chg.fuse{}", k + 1), 2 * c[k], c[k], seed))
            .collect::<Result<_>>()?;
        let loc_head = Conv2d::new(&mut store, "head.loc", c[0], cfg.loc_classes, 1, 1, true, Init::KaimingNormal, seed)?;
        let dmg_head = Conv2d::new(&mut store, "head.dmg", c[0], cfg.dmg_classes, 1, 1, true, Init::KaimingNormal, seed)?;
        let mut model = Model {
            cfg: cfg.clone(),
            seed,
            store,
            encoder,
            sem,
            chg_fuse,
            chg,
            loc_head,
            dmg_head,
            ag_b: None,
            ag_d: None,
            align: None,
        };
        model.set_enhancements(cfg.enhancements())?;
        Ok(model)
    }

    fn gates(store: &mut ParamStore, prefix: &str, c: [usize; 4], seed: u64) -> Result<Vec<AttentionGate>> {
        (0..3)
            .rev()
            .map(|k| AttentionGate::new(store, &format!("{prefix}.s{}", k + 1), c[k], c[k + 1], seed))
            .collect()
    }

    /// Switches optional modules on or off, constructing them on first
    /// use. Parameters of switched-off modules are kept but ignored.
    pub fn set_enhancements(&mut self, e: Enhancements) -> Result<()> {
        let c = self.cfg.stage_channels;
        if e.ag_building && self.ag_b.is_none() {
            self.ag_b = Some(Self::gates(&mut self.store, "ag_b", c, self.seed)?);
        }
        if e.ag_damage && self.ag_d.is_none() {
            self.ag_d = Some(Self::gates(&mut self.store, "ag_d", c, self.seed)?);
        }
        if e.align && self.align.is_none() {
            self.align = Some(
                (0..4)
                    .map(|k| AlignmentModule::new(&mut self.store, &format!("align.s{}", k + 1), c[k], self.seed))
                    .collect::<Result<_>>()?,
            );
        }
        self.cfg = self.cfg.clone().with_enhancements(e);
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn variant_name(&self) -> String {
        variant_name(&self.cfg)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn is_active(&self, name: &str) -> bool {
        let e = self.cfg.enhancements();
        let flags = [e.ag_building, e.ag_damage, e.align];
        GROUPS.iter().zip(flags).all(|(p, on)| on || !name.starts_with(p))
    }

    /// Parameters used by the current variant, in registration order.
    pub fn active_params(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| self.is_active(&p.name))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn count_params(&self) -> ParamCounts {
        let mut n = ParamCounts::default();
        for id in self.active_params() {
            let p = self.store.get(id);
            let slot = if p.name.starts_with("ag_b.") {
                &mut n.ag_building
            } else if p.name.starts_with("ag_d.") {
                &mut n.ag_damage
            } else if p.name.starts_with("align.") {
                &mut n.align
            } else {
                &mut n.base
            };
            *slot += p.numel();
        }
        n.total = n.base + n.ag_building + n.ag_damage + n.align;
        n
    }

    /// Encoder features of one image batch, finest first.
    pub fn encode(&self, store: &ParamStore, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(4);
        let mut h = x;
        for stage in &self.encoder {
            h = stage.down.forward(tape, store, h)?;
            h = stage.body.forward(tape, store, h)?;
            feats.push(h);
        }
        Ok(feats)
    }

    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        feats: &[Var],
        fusions: &[ConvGnRelu],
        gates: Option<&Vec<AttentionGate>>,
        attention: &mut Vec<(String, Var)>,
        prefix: &str,
    ) -> Result<Var> {
        let mut s = feats[3];
        for (i, k) in (0..3).rev().enumerate() {
            let skip = feats[k];
            let (_, _, h, w) = tape.value(skip).dims4()?;
            let up = tape.upsample(s, h, w)?;
            let skip = match gates {
                Some(g) => {
                    let (x_hat, alpha) = attention_gate(tape, store, &g[i], skip, s)?;
                    attention.push((format!("{prefix}.s{}", k + 1), alpha));
                    x_hat
                }
                None => skip,
            };
            let cat = tape.concat_channels(&[up, skip])?;
            s = fusions[i].forward(tape, store, cat)?;
        }
        Ok(s)
    }

    /// Full forward pass on `B×C×H×W` pre and post batches.
    pub fn forward(&self, tape: &mut Tape, pre: &Tensor, post: &Tensor) -> Result<ForwardOutput> {
        self.forward_with(&self.store, tape, pre, post)
    }

    /// [`Model::forward`] reading parameter values from `store`, which must
    /// have this model's layout.
    pub fn forward_with(&self, store: &ParamStore, tape: &mut Tape, pre: &Tensor, post: &Tensor) -> Result<ForwardOutput> {
        if pre.shape() != post.shape() {
            return Err(Error::contract(format!(
                "pre {:?} and post {:?} differ",
                pre.shape(),
                post.shape()
            )));
        }
        let (_, c, h, w) = pre.dims4()?;
        if c != self.cfg.input_channels {
            return Err(Error::contract(format!("expected {} input channels, got {c}", self.cfg.input_channels)));
        }
        if h % SIZE_DIVISOR != 0 || w % SIZE_DIVISOR != 0 || h == 0 || w == 0 {
            return Err(Error::contract(format!(
                "input {h}×{w} must be a positive multiple of {SIZE_DIVISOR} in both dimensions"
            )));
        }
        let e = self.cfg.enhancements();
        let pre_v = tape.constant(pre.clone());
        let post_v = tape.constant(post.clone());
        let mut pre_f = self.encode(store, tape, pre_v)?;
        let post_f = self.encode(store, tape, post_v)?;
        let mut flows = Vec::new();
        if let (true, Some(mods)) = (e.align, &self.align) {
            for k in 0..4 {
                let (flow, warped) = alignment_forward(tape, store, &mods[k], pre_f[k], post_f[k])?;
                flows.push(flow);
                pre_f[k] = warped;
            }
        }
        let mut attention = Vec::new();
        let ag_b = self.ag_b.as_ref().filter(|_| e.ag_building);
        let ag_d = self.ag_d.as_ref().filter(|_| e.ag_damage);
        let s1 = self.decode(store, tape, &pre_f, &self.sem, ag_b, &mut attention, "ag_b")?;
        let mut temporal = Vec::with_capacity(4);
        for k in 0..4 {
            let cat = tape.concat_channels(&[pre_f[k], post_f[k]])?;
            temporal.push(self.chg_fuse[k].forward(tape, store, cat)?);
        }
        let e1 = self.decode(store, tape, &temporal, &self.chg, ag_d, &mut attention, "ag_d")?;
        let loc = self.loc_head.forward(tape, store, s1)?;
        let loc = tape.upsample(loc, h, w)?;
        let dmg = self.dmg_head.forward(tape, store, e1)?;
        let dmg = tape.upsample(dmg, h, w)?;
        Ok(ForwardOutput {
            loc,
            dmg,
            attention,
            flows,
        })
    }

    /// Building loss plus damage loss for flat `B·H·W` targets.
    pub fn loss(&self, tape: &mut Tape, out: &ForwardOutput, loc: &[u8], dmg: &[u8]) -> Result<LossBreakdown> {
        let w = &self.cfg.loss_weights;
        let building = building_head_loss(tape, out.loc, loc, w)?;
        let damage = damage_head_loss(tape, out.dmg, dmg, &self.cfg.effective_focal(), w)?;
        let total = tape.linear(&[(building.total, 1.0), (damage.total, 1.0)])?;
        Ok(LossBreakdown {
            total,
            building,
            damage,
        })
    }

    /// Argmax building and damage masks per batch item.
    pub fn predict(&self, pre: &Tensor, post: &Tensor) -> Result<(Vec<Mask>, Vec<Mask>)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, pre, post)?;
        Ok((argmax_masks(tape.value(out.loc))?, argmax_masks(tape.value(out.dmg))?))
    }
}
