use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::render::{render, RenderedScene, SceneSpec};
use super::scene::{Background, ObjectId, ViewId, DEFAULT_GRID};
use super::tokens::{describe, tokenize_prompt, PromptTokens, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Pretrain,
    ViewShot,
    ObjectShots,
    HeldoutEval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataItem {
    pub scene: RenderedScene,
    pub prompt: PromptTokens,
}

/// Items are stored exactly as rendered; nothing flips, crops or jitters them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub split: Split,
    pub items: Vec<DataItem>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSpec {
    pub objects: Vec<ObjectId>,
    pub backgrounds: Vec<Background>,
    /// Occurrences of every (object, view) pair.
    pub repeats: usize,
    pub grid: usize,
}

impl Default for PretrainSpec {
    fn default() -> Self {
        Self { objects: ObjectId::ALL.to_vec(), backgrounds: Background::ALL.to_vec(), repeats: 4, grid: DEFAULT_GRID }
    }
}

/// Full factor grid: every object at every view, `repeats` times, cycling
/// through the backgrounds. Three in four captions name the view.
pub fn pretrain_split(spec: &PretrainSpec, seed: u64) -> Result<Dataset> {
    if spec.objects.is_empty() || spec.backgrounds.is_empty() || spec.repeats == 0 {
        return Err(Error::Parameter("pretrain split needs objects, backgrounds and repeats ≥ 1".into()));
    }
    let mut items = Vec::new();
    for (oi, &object) in spec.objects.iter().enumerate() {
        for view in ViewId::all() {
            for k in 0..spec.repeats {
                let bg = spec.backgrounds[(k + oi + view.index()) % spec.backgrounds.len()];
                let scene_seed = seed ^ ((oi as u64) << 32 | (view.index() as u64) << 8 | k as u64);
                let scene = render(&SceneSpec::new(object, view, bg).with_grid(spec.grid), scene_seed)?;
                let caption = if k % 4 == 3 { describe(None, object) } else { describe(Some(view), object) };
                items.push(DataItem { scene, prompt: caption });
            }
        }
    }
    Ok(Dataset { split: Split::Pretrain, items })
}

/// Identifier tokens bound to the concepts of one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptTokens {
    pub view_uid: Token,
    pub view_object_uid: Token,
    pub novel_object_uid: Token,
}

impl ConceptTokens {
    /// Three distinct identifiers drawn from the reserved pool.
    pub fn draw(rng: &mut Rng) -> Result<Self> {
        let mut pool: Vec<u32> = (0..super::tokens::UID_POOL).collect();
        rng.shuffle(&mut pool);
        Ok(Self {
            view_uid: Token::uid(pool[0])?,
            view_object_uid: Token::uid(pool[1])?,
            novel_object_uid: Token::uid(pool[2])?,
        })
    }

    /// Prompt the view adapter is trained on.
    pub fn view_prompt(&self, view_object: ObjectId) -> Result<PromptTokens> {
        tokenize_prompt(Some(self.view_uid), self.view_object_uid, Token::class(view_object))
    }

    /// Prompt the object adapter is trained on.
    pub fn object_prompt(&self, novel: ObjectId) -> Result<PromptTokens> {
        tokenize_prompt(None, self.novel_object_uid, Token::class(novel))
    }

    /// Prompt asking for the novel object at the learned view.
    pub fn transfer_prompt(&self, novel: ObjectId) -> Result<PromptTokens> {
        tokenize_prompt(Some(self.view_uid), self.novel_object_uid, Token::class(novel))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitRequest {
    pub target_view: ViewId,
    pub view_object: ObjectId,
    pub novel_object: ObjectId,
    pub n_object_shots: usize,
    pub background: Background,
    pub grid: usize,
    /// Views for the object shots; drawn at random when absent.
    pub object_shot_views: Option<Vec<ViewId>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConceptSplits {
    pub view_shot: Dataset,
    pub object_shots: Dataset,
    /// Ground truth: the novel object at the target view.
    pub heldout: RenderedScene,
    /// The view object at the target view (same pixels as the view shot).
    pub view_reference: RenderedScene,
    pub tokens: ConceptTokens,
}

pub fn make_splits(req: &SplitRequest, tokens: ConceptTokens, seed: u64) -> Result<ConceptSplits> {
    if req.novel_object == req.view_object {
        return Err(Error::Protocol(format!(
            "novel object `{}` is the object the view is learned from",
            req.novel_object.name()
        )));
    }
    if req.n_object_shots == 0 || req.n_object_shots >= ViewId::COUNT {
        return Err(Error::Parameter(format!("n_object_shots {} outside 1..32", req.n_object_shots)));
    }
    let shot_views = match &req.object_shot_views {
        Some(views) => {
            if views.contains(&req.target_view) {
                return Err(Error::Protocol(format!(
                    "object shot views include the target view {}",
                    req.target_view.name()
                )));
            }
            let distinct: BTreeSet<_> = views.iter().collect();
            if distinct.len() != views.len() || views.len() != req.n_object_shots {
                return Err(Error::Protocol(format!(
                    "need {} distinct object shot views, got {:?}",
                    req.n_object_shots,
                    views.iter().map(|v| v.name()).collect::<Vec<_>>()
                )));
            }
            views.clone()
        }
        None => {
            let mut rng = Rng::derived(seed, 0x73_686f74);
            let mut others: Vec<ViewId> = ViewId::all().into_iter().filter(|v| *v != req.target_view).collect();
            rng.shuffle(&mut others);
            others.truncate(req.n_object_shots);
            others
        }
    };

    let spec = |object, view| SceneSpec::new(object, view, req.background).with_grid(req.grid);
    let view_reference = render(&spec(req.view_object, req.target_view), seed)?;
    let view_shot = Dataset {
        split: Split::ViewShot,
        items: vec![DataItem { scene: view_reference.clone(), prompt: tokens.view_prompt(req.view_object)? }],
    };
    let object_prompt = tokens.object_prompt(req.novel_object)?;
    let object_shots = Dataset {
        split: Split::ObjectShots,
        items: shot_views
            .iter()
            .map(|&v| {
                Ok(DataItem { scene: render(&spec(req.novel_object, v), seed)?, prompt: object_prompt.clone() })
            })
            .collect::<Result<_>>()?,
    };
    let heldout = render(&spec(req.novel_object, req.target_view), seed)?;
    Ok(ConceptSplits { view_shot, object_shots, heldout, view_reference, tokens })
}
