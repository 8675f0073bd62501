# API routes package
from nonlocal_acf.api.router import ClaimRouter
from nonlocal_acf.api.routes.claims import router as claims_router
from nonlocal_acf.api.routes.direct_routes import router as direct_router

# Registry of every claim handler
registry = ClaimRouter(tags=["all"])
registry.include_router(claims_router)
registry.include_router(direct_router)

__all__ = ["claims_router", "direct_router", "registry"]
